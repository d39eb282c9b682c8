use std::hint::black_box;

use cfmi_core::metrics::{crps_sample, mmd, wasserstein2, Kernel};
use cfmi_core::Matrix;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sample(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(
        n,
        d,
        (0..n * d).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap()
}

fn transport(c: &mut Criterion) {
    let mut group = c.benchmark_group("w2");
    group.sample_size(10);
    for n in [64, 256, 512] {
        let (x, y) = (sample(n, 4, 0), sample(n, 4, 1));
        group.bench_with_input(BenchmarkId::new("square", n), &n, |b, _| {
            b.iter(|| wasserstein2(black_box(&x), black_box(&y)).unwrap())
        });
    }
    let (x, y) = (sample(300, 4, 2), sample(200, 4, 3));
    group.bench_function("unbalanced 300x200", |b| {
        b.iter(|| wasserstein2(&x, &y).unwrap())
    });
    group.finish();
}

fn discrepancy(c: &mut Criterion) {
    let (x, y) = (sample(1000, 4, 4), sample(1000, 4, 5));
    for (name, k) in [
        ("energy", Kernel::Energy),
        ("gaussian", Kernel::Gaussian(1.0)),
    ] {
        c.bench_function(&format!("mmd {name} 1000"), |b| {
            b.iter(|| mmd(&x, &y, k).unwrap())
        });
    }
}

fn scoring(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let draws: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
    c.bench_function("crps k50", |b| {
        b.iter(|| {
            let mut s = draws.clone();
            crps_sample(black_box(&mut s), 0.3)
        })
    });
}

criterion_group!(benches, transport, discrepancy, scoring);
criterion_main!(benches);
