//! Sequential vs rayon execution of the data-parallel hot paths. Build with
//! `--no-default-features` to see the fallback: `Parallel` then runs inline.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use claims_ssl::models::logit::logistic_objective;
use claims_ssl::models::{train_gbm, GbmConfig, Matrix};
use claims_ssl::rng::Rng;
use claims_ssl::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn logistic(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let (n, p) = (50_000, 27);
    let x: Vec<f64> = (0..n * p).map(|_| rng.normal()).collect();
    let y: Vec<f64> = (0..n).map(|_| if rng.bernoulli(0.15) { 1.0 } else { 0.0 }).collect();
    let w: Vec<f64> = (0..p).map(|_| rng.normal() * 0.1).collect();
    let mut group = c.benchmark_group("logistic_objective");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| logistic_objective(&x, &y, &w, -1.0, 1e-3, mode))
        });
    }
    group.finish();
}

fn gbm(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let (n, p) = (5_000, 48);
    let data: Vec<f64> = (0..n * p).map(|_| rng.normal()).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| if data[i * p] + 0.5 * data[i * p + 1] + 0.3 * rng.normal() > 0.8 { 1.0 } else { 0.0 })
        .collect();
    let x = Matrix { rows: n, cols: p, data };
    let mut group = c.benchmark_group("gbm_train_20_trees");
    group.sample_size(10);
    for (name, mode) in MODES {
        let config = GbmConfig { n_trees: 20, execution: mode, ..GbmConfig::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| train_gbm(&x, &y, &config).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, logistic, gbm);
criterion_main!(benches);
