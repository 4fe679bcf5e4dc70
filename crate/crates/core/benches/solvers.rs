//! Parallel vs sequential throughput for the batch workloads: lambda sweeps
//! and oracle solves over many random markets.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use kelly_riskcal::{gen, logcal, oracle, par};

fn lambda_sweep(c: &mut Criterion) {
    let mut rng = gen::rng(7);
    let (sm, sel) = gen::overround_with_prefix(&mut rng, 8);
    let grid: Vec<f64> = (1..=256).map(|k| 0.05 * k as f64).collect();

    let mut group = c.benchmark_group("lambda_sweep_256");
    group.bench_function("parallel", |b| b.iter(|| logcal::sweep(&sel, &sm, black_box(&grid))));
    group.bench_function("sequential", |b| {
        b.iter(|| logcal::sweep_sequential(&sel, &sm, black_box(&grid)))
    });
    group.finish();
}

fn oracle_batch(c: &mut Criterion) {
    let mut rng = gen::rng(11);
    let markets: Vec<_> = (0..32)
        .map(|_| gen::overround_with_prefix(&mut rng, 5).0.market().clone())
        .collect();

    let mut group = c.benchmark_group("oracle_batch_32");
    group.sample_size(10);
    for gamma in [1.0, 2.0] {
        group.bench_with_input(BenchmarkId::new("parallel", gamma), &gamma, |b, &g| {
            b.iter(|| par::map(&markets, |m| oracle::brute_force_solve(m, g, 2.0, 50)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", gamma), &gamma, |b, &g| {
            b.iter(|| par::map_sequential(&markets, |m| oracle::brute_force_solve(m, g, 2.0, 50)))
        });
    }
    group.finish();
}

fn single_calibration(c: &mut Criterion) {
    let mut rng = gen::rng(3);
    let (sm, sel) = gen::overround_with_prefix(&mut rng, 8);
    c.bench_function("calibrate_n8_lambda4", |b| b.iter(|| logcal::calibrate(&sel, &sm, black_box(4.0))));
}

criterion_group!(benches, lambda_sweep, oracle_batch, single_calibration);
criterion_main!(benches);
