use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sarcattn::model::ModelConfig;
use sarcattn_bench::{model_and_batch, square};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [32, 64, 128] {
        let (a, b) = (square(n, 1), square(n, 2));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| a.matmul(&b).unwrap())
        });
    }
    group.finish();
}

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch32");
    group.sample_size(20);
    for layers in [0, 1, 3] {
        let cfg = ModelConfig {
            num_layers: layers,
            ..Default::default()
        };
        let (model, batch) = model_and_batch(cfg, 32);
        group.bench_with_input(BenchmarkId::new("forward", layers), &layers, |bench, _| {
            bench.iter(|| model.predict_batch(&batch).unwrap())
        });
        group.bench_with_input(
            BenchmarkId::new("forward_backward", layers),
            &layers,
            |bench, _| bench.iter(|| model.loss_and_grads(&batch, None).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, matmul, forward_backward);
criterion_main!(benches);
