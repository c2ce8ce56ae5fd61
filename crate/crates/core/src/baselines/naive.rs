use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LevelId};

/// Per-level mean attempts over training players; ignores who is playing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBaselineModel {
    pub w0: f64,
    pub level_means: BTreeMap<LevelId, f64>,
    /// Global mean, used for levels never seen in training.
    pub fallback: f64,
}

pub fn fit_naive(train: &Dataset) -> NaiveBaselineModel {
    let mut sums: BTreeMap<LevelId, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    for r in train.records() {
        let e = sums.entry(r.level_id).or_default();
        e.0 += r.attempts as f64;
        e.1 += 1;
        total += r.attempts as f64;
    }
    let fallback = if train.is_empty() {
        1.0
    } else {
        total / train.len() as f64
    };
    NaiveBaselineModel {
        w0: 0.0,
        level_means: sums
            .into_iter()
            .map(|(l, (s, n))| (l, s / n as f64))
            .collect(),
        fallback,
    }
}

pub fn predict_naive(model: &NaiveBaselineModel, level_id: LevelId) -> f64 {
    model.w0
        + model
            .level_means
            .get(&level_id)
            .copied()
            .unwrap_or(model.fallback)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InteractionRecord;
    use crate::features::DesignRow;
    use crate::fm::FmModel;

    #[test]
    fn level_mean_and_fallback() {
        let d = Dataset::new(vec![
            InteractionRecord::new("a", 1, 2),
            InteractionRecord::new("b", 1, 4),
            InteractionRecord::new("a", 2, 6),
        ])
        .unwrap();
        let m = fit_naive(&d);
        assert_eq!(predict_naive(&m, 1), 3.0);
        assert_eq!(predict_naive(&m, 99), 4.0);
        assert_eq!(m.fallback, 4.0);
    }

    #[test]
    fn means_stay_in_attempt_range() {
        let d = Dataset::new(vec![
            InteractionRecord::new("a", 1, 45),
            InteractionRecord::new("b", 1, 1),
        ])
        .unwrap();
        let m = fit_naive(&d);
        assert!(m.level_means.values().all(|v| (1.0..=30.0).contains(v)));
    }

    /// Least squares on one-hot level rows recovers the level means, so the
    /// baseline is a linear factorization machine restricted to level columns.
    #[test]
    fn equals_linear_fm_on_level_columns() {
        let mut recs = Vec::new();
        for p in 0..7u32 {
            for l in 1..=5u32 {
                recs.push(InteractionRecord::new(
                    format!("p{p}"),
                    l,
                    1 + (p * 3 + l * l) % 9,
                ));
            }
        }
        let d = Dataset::new(recs).unwrap();
        let naive = fit_naive(&d);

        // normal equations for one-hot design: (X^T X) is diagonal with counts
        let mut xtx = [0.0f64; 5];
        let mut xty = [0.0f64; 5];
        for r in d.records() {
            let j = d.level_index()[&r.level_id];
            xtx[j] += 1.0;
            xty[j] += r.attempts as f64;
        }
        let mut fm = FmModel::zeros(5, 0);
        for j in 0..5 {
            fm.w[j] = xty[j] / xtx[j];
        }
        for (&level, &j) in d.level_index() {
            let x = DesignRow::new(vec![j as u32], vec![1.0], 0.0).unwrap();
            let y = fm.predict(&x).unwrap();
            assert!((y - predict_naive(&naive, level)).abs() < 1e-12);
        }
    }
}
