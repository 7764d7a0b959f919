use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use momfit_bench::{covering, separation};
use momfit_core::fitting::fit_direct;
use momfit_core::{
    moment_matrix, moment_vector, run_main_algorithm, uniform_measure, FitSettings, Settings,
};

fn moments(c: &mut Criterion) {
    let mut g = c.benchmark_group("moment_matrix");
    for len in [1_000, 10_000, 100_000] {
        let inst = covering(len / 2, 2);
        let m = uniform_measure(&Arc::new(inst.s1.clone())).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(len), &m, |b, m| {
            b.iter(|| moment_matrix(&moment_vector(m, 4).unwrap(), 2).unwrap())
        });
    }
    g.finish();
}

fn fitting(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    let cov = covering(5_000, 2);
    g.bench_function("main_algorithm/cover/10k", |b| {
        b.iter(|| run_main_algorithm(&cov, &FitSettings::default()).unwrap())
    });
    let cov4 = covering(5_000, 4);
    g.bench_function("main_algorithm/cover_d4/10k", |b| {
        b.iter(|| run_main_algorithm(&cov4, &FitSettings::default()).unwrap())
    });
    let sep = separation(5_000);
    g.bench_function("main_algorithm/separate/10k", |b| {
        b.iter(|| run_main_algorithm(&sep, &FitSettings::default()).unwrap())
    });
    let small = covering(500, 2);
    g.bench_function("per_point/cover/1k", |b| {
        b.iter(|| fit_direct(&small, &Settings::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, moments, fitting);
criterion_main!(benches);
