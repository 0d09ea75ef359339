//! Behaviour of the training loop on small hand-built datasets.

use mgcgru::net::{forward_window, GraphOperators, Mode};
use mgcgru::optim::{predict_samples, train, StopReason, TrainConfig};
use mgcgru::WindowSample;
use ndarray::{Array1, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = 6;
const F: usize = 3;
const LAG: usize = 3;

/// Label of each stock is whether its first feature on the last day is high.
fn separable(count: usize, seed: u64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|day| {
            let window = Array3::from_shape_simple_fn((LAG, N, F), || rng.random_range(0.0..1.0));
            let labels = Array1::from_shape_fn(N, |i| u8::from(window[[LAG - 1, i, 0]] > 0.5));
            WindowSample { day, window, labels }
        })
        .collect()
}

fn coin_flips(count: usize, seed: u64) -> Vec<WindowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|day| WindowSample {
            day,
            window: Array3::from_shape_simple_fn((LAG, N, F), || rng.random_range(0.0..1.0)),
            labels: Array1::from_shape_simple_fn(N, || u8::from(rng.random_bool(0.5))),
        })
        .collect()
}

fn small_config(mode: Mode) -> TrainConfig {
    TrainConfig { lag: LAG, mode, c1: 4, c: 4, h: 8, g: 8, batch_size: 16, ..TrainConfig::default() }
}

fn accuracy(samples: &[WindowSample], ops: &GraphOperators, params: &mgcgru::ModelParams) -> f64 {
    let probs = predict_samples(samples, ops, params).unwrap();
    let mut hit = 0usize;
    for (s, p) in samples.iter().zip(&probs) {
        hit += p.iter().zip(&s.labels).filter(|&(&q, &y)| u8::from(q > 0.5) == y).count();
    }
    hit as f64 / (samples.len() * N) as f64
}

#[test]
fn single_epoch_gives_one_history_row() {
    let ops = GraphOperators::new(Mode::None, &[], 1, N).unwrap();
    let config = TrainConfig { max_epochs: 1, ..small_config(Mode::None) };
    let out = train(&separable(40, 1), &separable(10, 2), &ops, &config, None).unwrap();
    assert_eq!(out.history.epochs.len(), 1);
    assert_eq!(out.history.best_epoch, Some(0));
    assert_eq!(out.stop, StopReason::MaxEpochs);
    assert_eq!(out.history.to_csv().lines().count(), 2);
}

#[test]
fn zero_epochs_is_rejected() {
    let ops = GraphOperators::new(Mode::None, &[], 1, N).unwrap();
    let config = TrainConfig { max_epochs: 0, ..small_config(Mode::None) };
    assert!(train(&separable(10, 1), &separable(5, 2), &ops, &config, None).is_err());
}

#[test]
fn learns_separable_labels() {
    let ops = GraphOperators::new(Mode::None, &[], 1, N).unwrap();
    let config = TrainConfig { max_epochs: 50, patience: 50, ..small_config(Mode::None) };
    let train_set = separable(200, 3);
    let out = train(&train_set, &separable(50, 4), &ops, &config, None).unwrap();
    let acc = accuracy(&train_set, &ops, &out.params);
    assert!(acc > 0.95, "training accuracy {acc}");
    let h = &out.history.epochs;
    assert!(h[1].train_loss < h[0].train_loss);
}

#[test]
fn patience_stops_on_noise_and_keeps_best_snapshot() {
    let ops = GraphOperators::new(Mode::None, &[], 1, N).unwrap();
    let config = TrainConfig { patience: 1, learning_rate: 0.05, ..small_config(Mode::None) };
    let val = coin_flips(20, 6);
    let out = train(&coin_flips(60, 5), &val, &ops, &config, None).unwrap();
    assert_eq!(out.stop, StopReason::Patience);
    let h = &out.history;
    let best = h.best_epoch.unwrap();
    assert_eq!(h.epochs.len(), best + 2, "one epoch without improvement then stop");
    let best_loss = h.epochs[best].val_loss;
    assert!(h.epochs.iter().all(|e| e.val_loss >= best_loss));
    assert!(best_loss <= h.epochs.last().unwrap().val_loss);

    // the returned parameters are the best snapshot, not the last iterate
    let loss = mgcgru::optim::evaluate_loss(&val, &ops, &out.params).unwrap().0;
    assert_eq!(loss.to_bits(), best_loss.to_bits());
}

#[test]
fn graph_mode_training_is_deterministic() {
    let laps = mgcgru::optim::random_instance(&mgcgru::optim::GradcheckConfig::new(Mode::Multi), 0).unwrap().0;
    let n = laps[0].matrix.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<WindowSample> = (0..30)
        .map(|day| WindowSample {
            day,
            window: Array3::from_shape_simple_fn((LAG, n, F), || rng.random_range(0.0..1.0)),
            labels: Array1::from_shape_simple_fn(n, || u8::from(rng.random_bool(0.5))),
        })
        .collect();
    let ops = GraphOperators::new(Mode::Multi, &laps, 1, n).unwrap();
    let config = TrainConfig { max_epochs: 3, shuffle: true, ..small_config(Mode::Multi) };
    let a = train(&data[..20], &data[20..], &ops, &config, None).unwrap();
    let b = train(&data[..20], &data[20..], &ops, &config, None).unwrap();
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    let pa = forward_window(data[0].window.view(), &ops, &a.params).unwrap().probs;
    let pb = forward_window(data[0].window.view(), &ops, &b.params).unwrap().probs;
    assert_eq!(pa, pb);
}
