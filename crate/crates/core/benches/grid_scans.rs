//! Sequential vs rayon execution of the grid scans.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mixagg::entropies::Entropy;
use mixagg::losses::LossSpec;
use mixagg::mixability::{certify_phi_mixable_with, mix_bruteforce_with, mixability_constant_with};
use mixagg::simplex::{Distribution, SimplexGrid};
use mixagg::Execution;

const POLICIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn mixability_constant(c: &mut Criterion) {
    let mut group = c.benchmark_group("mixability_constant");
    let brier = LossSpec::brier(3).unwrap();
    let grid = SimplexGrid::with_default_epsilon(3, 201).unwrap();
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::new(name, "brier n=3 res 201"), |b| {
            b.iter(|| mixability_constant_with(exec, black_box(&brier), &grid).unwrap())
        });
    }
    group.finish();
}

fn mix_oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("mix_bruteforce");
    let phi = Entropy::mixture(3, 0.5).unwrap();
    let q = Distribution::new(vec![0.2, 0.3, 0.5]).unwrap();
    let d = [1.0, 0.4, 2.5];
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::new(name, "mixture k=3 res 201"), |b| {
            b.iter(|| mix_bruteforce_with(exec, &phi, 1.0, black_box(&d), &q, 201).unwrap())
        });
    }
    group.finish();
}

fn certification(c: &mut Criterion) {
    let mut group = c.benchmark_group("certify");
    group.sample_size(20);
    let brier = LossSpec::brier(2).unwrap();
    let phi = Entropy::mixture(4, 0.5).unwrap();
    let grid = SimplexGrid::with_default_epsilon(4, 41).unwrap();
    for (name, exec) in POLICIES {
        group.bench_function(BenchmarkId::new(name, "brier/mixture k=4 res 41"), |b| {
            b.iter(|| certify_phi_mixable_with(exec, black_box(&brier), &phi, &grid).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, mixability_constant, mix_oracle, certification);
criterion_main!(benches);
