//! Fixtures shared by the benchmarks.

use levelfm_core::features::{build_rf_matrix, DenseMatrix, FeatureSet};
use levelfm_core::synth::{generate, SynthConfig};
use levelfm_core::{split_players, DesignRow, FmModel, SplitSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random model and `n` random rows with `nnz` active columns each.
pub fn random_fm(
    width: usize,
    k: usize,
    n: usize,
    nnz: usize,
    seed: u64,
) -> (FmModel, Vec<DesignRow>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = FmModel::zeros(width, k);
    m.w.iter_mut()
        .for_each(|w| *w = rng.random_range(-1.0..1.0));
    m.v.iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    let rows = (0..n)
        .map(|_| {
            let mut idx = rand::seq::index::sample(&mut rng, width, nnz).into_vec();
            idx.sort_unstable();
            let values = idx.iter().map(|_| rng.random_range(0.0..2.0)).collect();
            DesignRow::new(idx.into_iter().map(|i| i as u32).collect(), values, 0.0).unwrap()
        })
        .collect();
    (m, rows)
}

/// Two-hot training rows of a synthetic dataset, with the schema width.
pub fn synthetic_rows(players: usize, levels: usize) -> (Vec<DesignRow>, usize) {
    let out = generate(&SynthConfig {
        n_players: players,
        n_levels: levels,
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = split_players(&out.dataset, &bench_split(levels as u32)).unwrap();
    let fs = FeatureSet::build(&split, None, None, false).unwrap();
    (
        fs.encode_all(split.train.records()).unwrap(),
        fs.schema.width(),
    )
}

/// Dense random-forest inputs built from a synthetic dataset.
pub fn synthetic_dense(players: usize, levels: usize) -> (DenseMatrix, Vec<f64>) {
    let out = generate(&SynthConfig {
        n_players: players,
        n_levels: levels,
        seed: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = split_players(&out.dataset, &bench_split(levels as u32)).unwrap();
    let fs = FeatureSet::build(&split, Some(&out.levels), Some(&out.telemetry), true).unwrap();
    let m = build_rf_matrix(&split, &fs).unwrap();
    (m.train.x, m.train.y)
}

fn bench_split(levels: u32) -> SplitSpec {
    SplitSpec {
        test_fraction: 0.1,
        observed_levels: 10,
        eval_level_floor: levels / 2,
        min_history: Some(levels),
        seed: 0,
    }
}
