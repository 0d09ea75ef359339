//! Loss, Adam, the mini-batch training loop and the finite-difference
//! gradient check.

use std::fmt;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::graphs::{normalized_laplacian, AdjacencyMatrix, GraphKind, Laplacian};
use crate::metrics;
use crate::net::{backward_window, forward_window, Dims, GraphOperators, Mode, ModelParams};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Mean binary cross-entropy over stocks.
pub fn cross_entropy_loss(probs: ArrayView1<f64>, labels: ArrayView1<u8>) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} probabilities for {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::Invalid("empty prediction vector".into()));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Moment estimates for every active tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: zeros.clone(), second: zeros }
    }
}

/// One bias-corrected Adam update, tensor by tensor in a fixed order.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) -> Result<()> {
    let grads = grads.tensors();
    if let Some(bad) = grads.iter().find(|t| !t.data.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of {}", bad.name)));
    }
    let mut tensors = params.tensors_mut();
    if tensors.len() != grads.len() || tensors.len() != state.first.len() {
        return Err(Error::Shape("parameters, gradients and optimizer state disagree".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let correct1 = 1.0 - state.beta1.powi(t);
    let correct2 = 1.0 - state.beta2.powi(t);
    for (((p, g), m), v) in tensors.iter_mut().zip(&grads).zip(&mut state.first).zip(&mut state.second) {
        if p.data.len() != g.data.len() || p.data.len() != m.len() {
            return Err(Error::Shape(format!("tensor {} changed size", p.name)));
        }
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let m_hat = m[i] / correct1;
            let v_hat = v[i] / correct2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lag: usize,
    pub k: usize,
    pub mode: Mode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub c1: usize,
    pub c: usize,
    pub h: usize,
    pub g: usize,
    /// Shuffle training samples between epochs.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lag: 5,
            k: 1,
            mode: Mode::Multi,
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 42,
            c1: 16,
            c: 32,
            h: 32,
            g: 32,
            shuffle: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Invalid(msg.to_string()));
        if self.lag == 0 {
            return bad("lag must be at least 1");
        }
        if self.k == 0 {
            return bad("kernel size K must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        Ok(())
    }

    pub fn dims(&self, n: usize, f: usize) -> Dims {
        Dims { n, f, c1: self.c1, c: self.c, h: self.h, g: self.g }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Invalid(format!("bad value `{v}` for `{key}`")))
        }
        match key {
            "lag" => self.lag = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "mode" => self.mode = value.parse()?,
            "lr" | "learning_rate" => self.learning_rate = num(key, value)?,
            "batch" | "batch_size" => self.batch_size = num(key, value)?,
            "epochs" | "max_epochs" => self.max_epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "c1" => self.c1 = num(key, value)?,
            "c" => self.c = num(key, value)?,
            "h" => self.h = num(key, value)?,
            "g" => self.g = num(key, value)?,
            "shuffle" => self.shuffle = num(key, value)?,
            _ => return Err(Error::Invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("config line {}: expected key = value", i + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "lag = {}\nk = {}\nmode = {}\nlearning_rate = {}\nbatch_size = {}\nmax_epochs = {}\n\
             patience = {}\nseed = {}\nc1 = {}\nc = {}\nh = {}\ng = {}\nshuffle = {}\n",
            self.lag,
            self.k,
            self.mode,
            self.learning_rate,
            self.batch_size,
            self.max_epochs,
            self.patience,
            self.seed,
            self.c1,
            self.c,
            self.h,
            self.g,
            self.shuffle
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    Patience,
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// `epoch,train_loss,val_loss,val_accuracy,best`. Wall-clock timings are
    /// left out so that identical runs export identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_accuracy,best\n");
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{}\n",
                i + 1,
                e.train_loss,
                e.val_loss,
                e.val_accuracy,
                u8::from(self.best_epoch == Some(i))
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub params: ModelParams,
    pub history: TrainHistory,
    pub stop: StopReason,
}

/// Probabilities for each sample, computed in parallel and returned in order.
pub fn predict_samples(
    samples: &[WindowSample],
    ops: &GraphOperators,
    params: &ModelParams,
) -> Result<Vec<Array1<f64>>> {
    samples.par_iter().map(|s| forward_window(s.window.view(), ops, params).map(|t| t.probs)).collect()
}

/// Mean loss and pooled accuracy over a sample set.
pub fn evaluate_loss(samples: &[WindowSample], ops: &GraphOperators, params: &ModelParams) -> Result<(f64, f64)> {
    let probs = predict_samples(samples, ops, params)?;
    let mut loss = 0.0;
    let mut counts = metrics::ConfusionCounts::default();
    for (p, s) in probs.iter().zip(samples) {
        loss += cross_entropy_loss(p.view(), s.labels.view())?;
        counts += metrics::confusion(
            &metrics::classify(p.as_slice().expect("contiguous"), 0.5),
            s.labels.as_slice().expect("contiguous"),
        )?;
    }
    Ok((loss / samples.len() as f64, counts.accuracy()))
}

/// Mean loss and mean gradient over a batch. Per-sample passes run in
/// parallel; the reduction runs in sample order.
pub fn batch_gradient(
    batch: &[&WindowSample],
    ops: &GraphOperators,
    params: &ModelParams,
) -> Result<(f64, ModelParams)> {
    let parts: Vec<(f64, ModelParams)> = batch
        .par_iter()
        .map(|s| {
            let trace = forward_window(s.window.view(), ops, params)?;
            let loss = cross_entropy_loss(trace.probs.view(), s.labels.view())?;
            let grad = backward_window(&trace, s.labels.view(), ops, params)?;
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_scaled(scale, g);
    }
    Ok((loss * scale, total))
}

/// Mini-batch Adam with validation-loss early stopping. Starts from `init`
/// when given, otherwise from a seeded initialization.
pub fn train(
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    ops: &GraphOperators,
    config: &TrainConfig,
    init: Option<ModelParams>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Invalid("training and validation sets must be nonempty".into()));
    }
    let (_, n, f) = train_set[0].window.dim();
    let mut params = match init {
        Some(p) => {
            p.validate()?;
            p
        }
        None => ModelParams::init(config.dims(n, f), config.mode, config.k, config.seed)?,
    };
    if params.mode != ops.mode {
        return Err(Error::Invalid(format!("parameters are {} but graph operators are {}", params.mode, ops.mode)));
    }
    let mut adam = AdamState::new(&params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x05ee_d0fb_a7c4);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad) = batch_gradient(&batch, ops, &params)?;
            loss_sum += loss * batch.len() as f64;
            if !loss.is_finite() {
                break;
            }
            adam_step(&mut params, &grad, &mut adam, config.learning_rate)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_accuracy) = if train_loss.is_finite() && params.is_finite() {
            evaluate_loss(val_set, ops, &params)?
        } else {
            (f64::NAN, f64::NAN)
        };
        history.epochs.push(EpochRecord {
            train_loss,
            val_loss,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!("epoch {:>3}  train {train_loss:.5}  val {val_loss:.5}  acc {val_accuracy:.4}", epoch + 1);
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            stop = StopReason::Diverged { epoch: epoch + 1 };
            break;
        }
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stop = StopReason::Patience;
                break;
            }
        }
    }
    let params = best.map_or(params, |(_, p)| p);
    Ok(TrainOutcome { params, history, stop })
}

/// Options for [`gradcheck`].
#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub mode: Mode,
    pub dims: Dims,
    pub lag: usize,
    pub k: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Test hook: adds this offset to the first analytic entry of the named
    /// tensor, which must then be reported as failing.
    pub corrupt: Option<(String, f64)>,
}

impl GradcheckConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            dims: Dims { n: 5, f: 3, c1: 4, c: 4, h: 4, g: 4 },
            lag: 3,
            k: 1,
            step: 1e-5,
            tolerance: 1e-4,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: &'static str,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub mode: Mode,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors.iter().filter(|t| t.max_rel_error >= self.tolerance).collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode {}  tolerance {:e}", self.mode, self.tolerance)?;
        for t in &self.tensors {
            writeln!(
                f,
                "  {:<16} {:>5} entries  max rel {:.3e}  max abs {:.3e}  {}",
                t.name,
                t.entries,
                t.max_rel_error,
                t.max_abs_error,
                if t.max_rel_error < self.tolerance { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Relative error with a floor on the denominator so entries whose true
/// gradient is near zero are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Random graphs, window, labels and parameters for a gradient check.
pub fn random_instance(config: &GradcheckConfig, seed: u64) -> Result<(Vec<Laplacian>, WindowSample, ModelParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.dims.n;
    let laplacians = GraphKind::ALL
        .iter()
        .map(|&kind| {
            let w = Array2::from_shape_fn((n, n), |(i, j)| {
                if i != j && rng.random_bool(0.6) {
                    rng.random_range(0.05..1.5)
                } else {
                    0.0
                }
            });
            AdjacencyMatrix::new(kind, w).map(|a| normalized_laplacian(&a))
        })
        .collect::<Result<Vec<_>>>()?;
    let window = Array3::from_shape_simple_fn((config.lag, n, config.dims.f), || rng.random_range(0.0..1.0));
    let labels = Array1::from_shape_simple_fn(n, || u8::from(rng.random_bool(0.5)));
    let mut params = ModelParams::init(config.dims, config.mode, config.k, rng.random())?;
    // move off the symmetric initial point
    params.for_each_mut(|t| {
        if t.name.contains("_b") || t.name.starts_with("poly") || t.name == "graph_coeffs" {
            for v in t.data.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    });
    Ok((laplacians, WindowSample { day: config.lag, window, labels }, params))
}

fn sample_loss(sample: &WindowSample, ops: &GraphOperators, params: &ModelParams) -> Result<f64> {
    let trace = forward_window(sample.window.view(), ops, params)?;
    cross_entropy_loss(trace.probs.view(), sample.labels.view())
}

/// Compares analytic gradients with central differences on every entry of
/// every tensor the mode uses.
pub fn gradcheck_instance(
    config: &GradcheckConfig,
    laplacians: &[Laplacian],
    sample: &WindowSample,
    params: &ModelParams,
) -> Result<GradcheckReport> {
    let ops = GraphOperators::new(config.mode, laplacians, config.k, config.dims.n)?;
    let trace = forward_window(sample.window.view(), &ops, params)?;
    let mut analytic = backward_window(&trace, sample.labels.view(), &ops, params)?;
    if let Some((name, offset)) = &config.corrupt {
        let mut hit = false;
        analytic.for_each_mut(|t| {
            if t.name == name {
                t.data[0] += offset;
                hit = true;
            }
        });
        if !hit {
            return Err(Error::Invalid(format!("no tensor named `{name}` in mode {}", config.mode)));
        }
    }

    let h = config.step;
    let mut probe = params.clone();
    let mut tensors = Vec::new();
    for (ti, a) in analytic.tensors().iter().enumerate() {
        let mut check = TensorCheck { name: a.name, entries: a.data.len(), max_rel_error: 0.0, max_abs_error: 0.0 };
        for i in 0..a.data.len() {
            let original = params.tensors()[ti].data[i];
            probe.tensors_mut()[ti].data[i] = original + h;
            let up = sample_loss(sample, &ops, &probe)?;
            probe.tensors_mut()[ti].data[i] = original - h;
            let down = sample_loss(sample, &ops, &probe)?;
            probe.tensors_mut()[ti].data[i] = original;
            let numeric = (up - down) / (2.0 * h);
            check.max_rel_error = check.max_rel_error.max(relative_error(a.data[i], numeric));
            check.max_abs_error = check.max_abs_error.max((a.data[i] - numeric).abs());
        }
        tensors.push(check);
    }
    Ok(GradcheckReport { mode: config.mode, tolerance: config.tolerance, tensors })
}

pub fn gradcheck(config: &GradcheckConfig, seed: u64) -> Result<GradcheckReport> {
    let (laplacians, sample, params) = random_instance(config, seed)?;
    gradcheck_instance(config, &laplacians, &sample, &params)
}
