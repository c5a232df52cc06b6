use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dualprop::analysis::lipschitz_estimate;
use dualprop::learning::{backprop_oracle, weight_gradient};
use dualprop::linalg::spectral_norm;
use dualprop::{run_inference, LossKind, NudgeConfig, Schedule, Scheme};
use dualprop_bench::{mlp, sample};

fn inference(c: &mut Criterion) {
    let params = mlp(&[784, 256, 256, 10], 0);
    let (x, y) = sample(&params, 1);
    let mut group = c.benchmark_group("inference_784_256_256_10");
    for (name, cfg) in [
        ("dpt_sweep", NudgeConfig::new(Scheme::Dpt, 0.0, 0.5)),
        ("dp_sweep", NudgeConfig::new(Scheme::Dp, 0.5, 0.5)),
        ("dpt_sweeps30", NudgeConfig::new(Scheme::Dpt, 0.0, 0.5).with_schedule(Schedule::RepeatedSweeps(30))),
        ("stabilized_sweeps10", NudgeConfig::new(Scheme::DpStabilized, 1.0, 0.5).with_schedule(Schedule::RepeatedSweeps(10))),
    ] {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_inference(&params, black_box(&x), &y, &cfg, LossKind::LeastSquares).unwrap())
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let params = mlp(&[784, 128, 128, 10], 0);
    let (x, y) = sample(&params, 2);
    let cfg = NudgeConfig::new(Scheme::Dpt, 0.5, 0.5);
    let state = run_inference(&params, &x, &y, &cfg, LossKind::LeastSquares).unwrap().state;
    c.bench_function("weight_gradient_784_128_128_10", |b| {
        b.iter(|| weight_gradient(&params, black_box(&state), &cfg).unwrap())
    });
    c.bench_function("backprop_784_128_128_10", |b| {
        b.iter(|| backprop_oracle(&params, black_box(&x), &y, LossKind::LeastSquares).unwrap())
    });
}

fn spectral(c: &mut Criterion) {
    let params = mlp(&[784, 128, 128, 10], 0);
    c.bench_function("spectral_norm_128x784_100", |b| {
        b.iter(|| spectral_norm(black_box(&params.weights()[0]), 100, 0).unwrap())
    });
    c.bench_function("lipschitz_784_128_128_10", |b| b.iter(|| lipschitz_estimate(black_box(&params))));
}

criterion_group!(benches, inference, gradients, spectral);
criterion_main!(benches);
