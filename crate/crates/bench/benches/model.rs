use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mgcgru::graphs::normalized_laplacian;
use mgcgru::net::{backward_window, forward_window, GraphOperators, Mode, ModelParams};
use mgcgru::optim::batch_gradient;
use mgcgru::TrainConfig;
use mgcgru_bench::Workload;

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("window");
    for n in [20, 60] {
        let w = Workload::new(n, 120, 5);
        let sample = &w.prepared.samples.train[0];
        let (_, _, f) = sample.window.dim();
        for mode in [Mode::None, Mode::Multi, Mode::Dynamic] {
            let dims = TrainConfig::default().dims(n, f);
            let params = ModelParams::init(dims, mode, 1, 1).unwrap();
            let ops = GraphOperators::new(mode, &w.graphs.laplacians, 1, n).unwrap();
            let id = format!("{mode}/n{n}");
            group.bench_function(BenchmarkId::new("forward", &id), |b| {
                b.iter(|| forward_window(black_box(sample.window.view()), &ops, &params).unwrap())
            });
            let trace = forward_window(sample.window.view(), &ops, &params).unwrap();
            group.bench_function(BenchmarkId::new("backward", &id), |b| {
                b.iter(|| backward_window(black_box(&trace), sample.labels.view(), &ops, &params).unwrap())
            });
        }
    }
    group.finish();
}

fn laplacian(c: &mut Criterion) {
    let mut group = c.benchmark_group("laplacian");
    for n in [20, 100] {
        let w = Workload::new(n, 30, 5);
        let adj = &w.graphs.adjacency[1];
        group.bench_with_input(BenchmarkId::from_parameter(n), adj, |b, a| {
            b.iter(|| normalized_laplacian(black_box(a)))
        });
    }
    group.finish();
}

fn training_batch(c: &mut Criterion) {
    let w = Workload::new(20, 200, 5);
    let config = TrainConfig::default();
    let f = w.prepared.samples.train[0].window.dim().2;
    let params = ModelParams::init(config.dims(20, f), Mode::Multi, 1, 1).unwrap();
    let ops = GraphOperators::new(Mode::Multi, &w.graphs.laplacians, 1, 20).unwrap();
    let batch: Vec<_> = w.prepared.samples.train.iter().take(config.batch_size).collect();
    c.bench_function("batch_gradient/multi/n20/b32", |b| {
        b.iter(|| batch_gradient(black_box(&batch), &ops, &params).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = forward_backward, laplacian, training_batch
}
criterion_main!(benches);
