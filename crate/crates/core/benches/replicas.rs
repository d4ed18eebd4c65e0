use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fvmod_core::coalescent::sample_block_counting;
use fvmod_core::lookdown::{dyadic_grid, simulate, Setup};
use fvmod_core::rng::replica_seed;
use fvmod_core::{par, LambdaMeasure};

fn block_counting(c: &mut Criterion) {
    let m = LambdaMeasure::beta(1.5).unwrap();
    let mut group = c.benchmark_group("block_counting_64x1e4");
    group.sample_size(10);
    let job = |r: u64| sample_block_counting(&m, 10_000, 1.0, replica_seed(1, r)).map(|p| p.counts.len());
    group.bench_function(BenchmarkId::new("sequential", 64), |b| {
        b.iter(|| black_box(par::map_sequential(64, job).unwrap()))
    });
    group.bench_function(BenchmarkId::new("parallel", 64), |b| {
        b.iter(|| black_box(par::map_replicas(64, job).unwrap()))
    });
    group.finish();
}

fn lookdown(c: &mut Criterion) {
    let m = LambdaMeasure::kingman(1.0).unwrap();
    let setup = Setup::new(500, 1, 1.0, dyadic_grid(6, 1.0));
    let mut group = c.benchmark_group("lookdown_16xn500");
    group.sample_size(10);
    let job = |r: u64| simulate(&m, &setup, replica_seed(2, r)).map(|p| p.events.len());
    group.bench_function(BenchmarkId::new("sequential", 16), |b| {
        b.iter(|| black_box(par::map_sequential(16, job).unwrap()))
    });
    group.bench_function(BenchmarkId::new("parallel", 16), |b| {
        b.iter(|| black_box(par::map_replicas(16, job).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, block_counting, lookdown);
criterion_main!(benches);
