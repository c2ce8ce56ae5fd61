use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use levelfm_bench::{random_fm, synthetic_dense, synthetic_rows};
use levelfm_core::baselines::{fit_forest, ForestConfig};
use levelfm_core::trainer::{GibbsSampler, McmcConfig, TrainData};

fn predict(c: &mut Criterion) {
    let mut g = c.benchmark_group("fm_predict");
    for k in [2usize, 8, 32] {
        let (m, rows) = random_fm(5000, k, 1000, 12, 7);
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| {
                rows.iter()
                    .map(|r| m.predict(black_box(r)).unwrap())
                    .sum::<f64>()
            })
        });
    }
    g.finish();
}

fn gibbs_sweep(c: &mut Criterion) {
    let (rows, width) = synthetic_rows(200, 100);
    let data = TrainData::new(&rows, width).unwrap();
    let mut g = c.benchmark_group("gibbs_sweep");
    g.sample_size(20);
    for k in [2usize, 8] {
        let config = McmcConfig {
            factors: k,
            ..McmcConfig::default()
        };
        let mut sampler = GibbsSampler::new(&data, &config, None).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| sampler.sweep().unwrap())
        });
    }
    g.finish();
}

fn forest_fit(c: &mut Criterion) {
    let (x, y) = synthetic_dense(60, 80);
    let config = ForestConfig {
        n_estimators: 10,
        ..ForestConfig::default()
    };
    let mut g = c.benchmark_group("forest_fit");
    g.sample_size(10);
    g.bench_function("10_trees", |b| {
        b.iter(|| fit_forest(black_box(&x), &y, &config).unwrap())
    });
    g.finish();
}

criterion_group!(benches, predict, gibbs_sweep, forest_fit);
criterion_main!(benches);
