use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvreplica::experiment::Mode;
use mvreplica::{brute_force_qp, estimate, generate, run_trial, solve_exact, Divisor};
use mvreplica_bench::toeplitz_model;
use std::hint::black_box;

fn exact_vs_kkt(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    for n in [16usize, 64, 256] {
        let model = toeplitz_model(n);
        group.bench_with_input(BenchmarkId::new("closed_form", n), &model, |b, m| {
            b.iter(|| solve_exact(black_box(m), 0.55, 1.0).unwrap())
        });
        if n <= 64 {
            group.bench_with_input(BenchmarkId::new("kkt_svd", n), &model, |b, m| {
                b.iter(|| brute_force_qp(black_box(m), 0.55, 1.0).unwrap())
            });
        }
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let model = toeplitz_model(64);
    c.bench_function("generate_estimate_64x128", |b| {
        b.iter(|| {
            let s = generate(&model, 128, black_box(9)).unwrap();
            estimate(&s, Divisor::T)
        })
    });
}

fn trial(c: &mut Criterion) {
    let model = toeplitz_model(64);
    c.bench_function("run_trial_full_64x128", |b| {
        b.iter(|| run_trial(&model, 128, 0.5, Mode::FullMarkowitz, black_box(3)).unwrap())
    });
}

criterion_group!(benches, exact_vs_kkt, sampling, trial);
criterion_main!(benches);
