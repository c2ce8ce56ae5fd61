use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, TreeConfig};
use crate::error::{Error, Result};
use crate::features::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// `None` considers every feature at every split.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 150,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            min_samples_leaf: self.min_samples_leaf,
            max_features: self.max_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<RegressionTree>,
    pub config: ForestConfig,
    pub n_features: usize,
    pub n_train: usize,
    /// Mean impurity-decrease importance, normalized to sum to one.
    pub feature_importances: Vec<f64>,
    /// Standard deviation of the per-tree normalized importances.
    pub importance_std: Vec<f64>,
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Bootstrap draw of tree `tree`: `n` indices sampled with replacement.
pub fn bootstrap_indices(seed: u64, tree: usize, n: usize) -> Vec<usize> {
    let mut rng = tree_rng(seed, tree);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn fit_forest(x: &DenseMatrix, y: &[f64], config: &ForestConfig) -> Result<RandomForestModel> {
    if x.rows() != y.len() {
        return Err(Error::Contract(format!(
            "{} feature rows but {} targets",
            x.rows(),
            y.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::Contract("forest needs at least two samples".into()));
    }
    if config.n_estimators == 0 {
        return Err(Error::Config("n_estimators must be positive".into()));
    }
    for i in 0..x.rows() {
        if let Some(j) = x.row(i).iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature value at row {i}, column {j}"
            )));
        }
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite target at row {i}")));
    }

    let n = y.len();
    let tree_cfg = config.tree_config();
    let trees: Vec<RegressionTree> = (0..config.n_estimators)
        .into_par_iter()
        .map(|t| {
            let samples = if config.bootstrap {
                bootstrap_indices(config.seed, t, n)
            } else {
                (0..n).collect()
            };
            // feature subsampling draws from a stream disjoint from the bootstrap
            let mut rng = tree_rng(config.seed ^ 0x9e37_79b9_7f4a_7c15, t);
            RegressionTree::fit(x, y, samples, &tree_cfg, &mut rng)
        })
        .collect();

    let p = x.cols();
    let per_tree: Vec<Vec<f64>> = trees
        .iter()
        .map(|t| {
            let raw = t.raw_importances();
            let s: f64 = raw.iter().sum();
            if s > 0.0 {
                raw.iter().map(|v| v / s).collect()
            } else {
                raw
            }
        })
        .collect();
    let t = trees.len() as f64;
    let mut mean = vec![0.0; p];
    for imp in &per_tree {
        for (m, v) in mean.iter_mut().zip(imp) {
            *m += v / t;
        }
    }
    let mut std = vec![0.0; p];
    for imp in &per_tree {
        for j in 0..p {
            std[j] += (imp[j] - mean[j]).powi(2) / t;
        }
    }
    std.iter_mut().for_each(|s| *s = s.sqrt());
    let total: f64 = mean.iter().sum();
    if total > 0.0 {
        mean.iter_mut().for_each(|m| *m /= total);
    }

    Ok(RandomForestModel {
        trees,
        config: config.clone(),
        n_features: p,
        n_train: n,
        feature_importances: mean,
        importance_std: std,
    })
}

pub fn predict_forest(model: &RandomForestModel, row: &[f64]) -> Result<f64> {
    if row.len() != model.n_features {
        return Err(Error::Contract(format!(
            "row has {} features, forest expects {}",
            row.len(),
            model.n_features
        )));
    }
    Ok(model.trees.iter().map(|t| t.predict(row)).sum::<f64>() / model.trees.len() as f64)
}

impl RandomForestModel {
    pub fn predict_matrix(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        (0..x.rows())
            .into_par_iter()
            .map(|i| predict_forest(self, x.row(i)))
            .collect()
    }

    /// Training rows left out of tree `tree`'s bootstrap sample.
    pub fn oob_indices(&self, tree: usize) -> Vec<usize> {
        if !self.config.bootstrap {
            return Vec::new();
        }
        let mut seen = vec![false; self.n_train];
        for i in bootstrap_indices(self.config.seed, tree, self.n_train) {
            seen[i] = true;
        }
        (0..self.n_train).filter(|&i| !seen[i]).collect()
    }
}

/// CSV `feature,mean_importance,std_importance`.
pub fn write_importances<W: Write>(
    names: &[String],
    model: &RandomForestModel,
    writer: W,
) -> Result<()> {
    if names.len() != model.n_features {
        return Err(Error::Contract(
            "feature name count differs from forest width".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "mean_importance", "std_importance"])?;
    for (j, name) in names.iter().enumerate() {
        w.write_record([
            name.clone(),
            model.feature_importances[j].to_string(),
            model.importance_std[j].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(seed: u64, n: usize) -> (DenseMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * 3);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            let c: f64 = rng.random_range(0.0..1.0);
            data.extend([a, b, c]);
            y.push(1.0 + 4.0 * a + (b * 6.0).sin() + 0.1 * rng.random_range(-1.0..1.0));
        }
        (DenseMatrix::new(n, 3, data).unwrap(), y)
    }

    fn small(seed: u64) -> ForestConfig {
        ForestConfig {
            n_estimators: 12,
            seed,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn defaults() {
        let c = ForestConfig::default();
        assert_eq!(c.n_estimators, 150);
        assert_eq!(c.max_depth, None);
        assert_eq!(c.min_samples_split, 2);
        assert_eq!(c.max_features, None);
        assert!(c.bootstrap);
    }

    #[test]
    fn constant_target() {
        let (x, _) = fixture(1, 30);
        let m = fit_forest(&x, &[4.0; 30], &small(1)).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(predict_forest(&m, &[0.3, 0.2, 0.9]).unwrap(), 4.0);
        assert!(m.feature_importances.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn prediction_is_tree_mean() {
        let (x, y) = fixture(2, 80);
        let m = fit_forest(&x, &y, &small(2)).unwrap();
        let row = [0.5, 0.5, 0.5];
        let mean = m.trees.iter().map(|t| t.predict(&row)).sum::<f64>() / m.trees.len() as f64;
        assert_eq!(predict_forest(&m, &row).unwrap(), mean);
    }

    #[test]
    fn single_and_repeated_trees() {
        let (x, y) = fixture(3, 40);
        let mut one = fit_forest(
            &x,
            &y,
            &ForestConfig {
                n_estimators: 1,
                ..small(3)
            },
        )
        .unwrap();
        let row = [0.1, 0.7, 0.2];
        assert_eq!(
            predict_forest(&one, &row).unwrap(),
            one.trees[0].predict(&row)
        );
        let tree = one.trees[0].clone();
        one.trees = vec![tree.clone(), tree.clone(), tree];
        assert!((predict_forest(&one, &row).unwrap() - one.trees[0].predict(&row)).abs() < 1e-12);
    }

    #[test]
    fn importances_normalized() {
        let (x, y) = fixture(4, 120);
        let m = fit_forest(&x, &y, &small(4)).unwrap();
        let s: f64 = m.feature_importances.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(m.feature_importances.iter().all(|v| *v >= 0.0));
        // the dominant linear feature wins
        assert!(m.feature_importances[0] > m.feature_importances[2]);
        assert_eq!(m.importance_std.len(), 3);
    }

    #[test]
    fn range_preserved() {
        let (x, y) = fixture(5, 60);
        let m = fit_forest(&x, &y, &small(5)).unwrap();
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (probe, _) = fixture(50, 100);
        for p in m.predict_matrix(&probe).unwrap() {
            assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }
    }

    #[test]
    fn deterministic_and_oob_reproducible() {
        let (x, y) = fixture(6, 50);
        let a = fit_forest(&x, &y, &small(6)).unwrap();
        let b = fit_forest(&x, &y, &small(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.oob_indices(3), b.oob_indices(3));
        assert!(!a.oob_indices(3).is_empty());
        let boot = bootstrap_indices(6, 3, 50);
        assert!(a.oob_indices(3).iter().all(|i| !boot.contains(i)));
    }

    #[test]
    fn validation_errors() {
        let x = DenseMatrix::new(2, 1, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(
            fit_forest(&x, &[1.0, 2.0], &small(0)),
            Err(Error::Validation(_))
        ));
        let x = DenseMatrix::new(1, 1, vec![1.0]).unwrap();
        assert!(fit_forest(&x, &[1.0], &small(0)).is_err());
        let (x, y) = fixture(7, 10);
        let m = fit_forest(&x, &y, &small(7)).unwrap();
        assert!(matches!(
            predict_forest(&m, &[1.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn importances_csv() {
        let (x, y) = fixture(8, 30);
        let m = fit_forest(&x, &y, &small(8)).unwrap();
        let names = vec!["a".to_string(), "b".into(), "c".into()];
        let mut buf = Vec::new();
        write_importances(&names, &m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("feature,mean_importance,std_importance\na,"));
    }
}
