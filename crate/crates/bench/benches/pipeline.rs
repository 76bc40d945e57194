use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mtj_bench::{evaluation_inputs, network, noisy_map, sample, weights};
use mtj_core::imaging::{apply_augment, normalize, sample_augment};
use mtj_core::localizer::locate;
use mtj_core::metrics::{evaluate, EvaluateOptions};
use mtj_core::network::{backward, forward};
use mtj_core::trainer::BceLoss;
use mtj_core::Point;

/// (depth, base filters, width, height): the desk-scale model and the
/// full-size one.
const MODELS: [(usize, usize, usize, usize); 2] = [(3, 16, 128, 64), (4, 64, 256, 128)];

fn model_name(m: &(usize, usize, usize, usize)) -> String {
    format!("d{}_f{}_{}x{}", m.0, m.1, m.2, m.3)
}

fn bench_network(c: &mut Criterion) {
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    for m in &MODELS {
        let w = weights(&network(m.0, m.1, m.2, m.3));
        let (frame, target) = sample(m.2, m.3, 3);
        let frame = normalize(&frame);
        let loss = BceLoss::new(0.1);
        group.bench_with_input(BenchmarkId::new("forward", model_name(m)), &frame, |b, f| {
            b.iter(|| forward(black_box(&w), black_box(f)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("backward", model_name(m)), &frame, |b, f| {
            b.iter(|| backward(black_box(&w), black_box(f), &target, &loss).unwrap())
        });
    }
    group.finish();
}

fn bench_locate(c: &mut Criterion) {
    let mut group = c.benchmark_group("locate");
    for (w, h) in [(128, 64), (256, 128)] {
        let map = noisy_map(w, h, Point::new(w as f64 * 0.4 + 0.3, h as f64 * 0.55 - 0.2));
        group.bench_with_input(BenchmarkId::from_parameter(format!("{w}x{h}")), &map, |b, m| {
            b.iter(|| locate(black_box(m)))
        });
    }
    group.finish();
}

fn bench_augment(c: &mut Criterion) {
    let (frame, target) = sample(256, 128, 5);
    let params = sample_augment(9);
    c.bench_function("augment/256x128", |b| {
        b.iter(|| apply_augment(black_box(&frame), black_box(&target), &params).unwrap())
    });
}

fn bench_evaluate(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate");
    for n in [100, 1360] {
        let (predictions, labels, manifest) = evaluation_inputs(n);
        let options = EvaluateOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| evaluate(black_box(&predictions), &labels, &manifest, &options).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_network, bench_locate, bench_augment, bench_evaluate);
criterion_main!(benches);
