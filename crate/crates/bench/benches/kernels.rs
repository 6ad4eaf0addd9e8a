use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use homlab_core::fields::{build_preset, Preset};
use homlab_core::grid::GridFunction;
use homlab_core::smoothing::smooth_seps;
use homlab_core::solver::{solve_oscillating, ProblemData};
use homlab_core::{cell, fft};

fn bench_fft(c: &mut Criterion) {
    let mut group = c.benchmark_group("fft");
    for &n in &[64usize, 128] {
        let data: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.37).sin()).collect();
        group.bench_with_input(BenchmarkId::new("forward_2d", n), &n, |b, &n| {
            b.iter(|| fft::forward(&[n, n], &data));
        });
    }
    group.finish();
}

fn bench_cell_solve(c: &mut Criterion) {
    let cs = build_preset(Preset::Smooth2d, &[2.0, 1.0], 1, 2, 32, 1.0).unwrap();
    c.bench_function("cell_corrector_smooth2d_n32", |b| {
        b.iter(|| cell::solve_cell_corrector(&cs, 1, 1e-8).unwrap());
    });
}

fn bench_smoothing(c: &mut Criterion) {
    let f = GridFunction::from_fn(2, 128, 1, |_, x| (7.0 * x[0] + 3.0 * x[1]).sin());
    c.bench_function("smooth_seps_n128", |b| {
        b.iter(|| smooth_seps(&f, 1.0 / 16.0).unwrap());
    });
}

fn bench_oscillating_solve(c: &mut Criterion) {
    let cs = build_preset(Preset::Smooth2d, &[2.0, 1.0], 1, 2, 32, 1.0).unwrap();
    let n = 64;
    let data = ProblemData {
        big_f: Some(GridFunction::from_fn(2, n, 1, |_, _| 1.0)),
        ..Default::default()
    };
    c.bench_function("solve_oscillating_smooth2d_n64", |b| {
        b.iter(|| solve_oscillating(&cs, 0.25, &data, n, false, 1e-8, false).unwrap());
    });
}

criterion_group!(
    kernels,
    bench_fft,
    bench_cell_solve,
    bench_smoothing,
    bench_oscillating_solve
);
criterion_main!(kernels);
