use std::collections::BTreeSet;

use levelfm_core::analysis::spearman;
use levelfm_core::eval::{mae, rmse, rolling_mean};
use levelfm_core::features::color_entropy;
use levelfm_core::{split_players, Dataset, DesignRow, FmModel, InteractionRecord, SplitSpec};
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    // every player has a full history up to some length; some are short
    (5usize..30, 10u32..20).prop_flat_map(|(players, shortest)| {
        prop::collection::vec(
            (shortest..shortest + 50, prop::collection::vec(1u32..40, 80)),
            players,
        )
        .prop_map(move |rows| {
            let mut records = Vec::new();
            for (u, (len, attempts)) in rows.into_iter().enumerate() {
                for l in 1..=len {
                    records.push(InteractionRecord::new(
                        format!("p{u}"),
                        l,
                        attempts[l as usize % 80],
                    ));
                }
            }
            Dataset::new(records).unwrap()
        })
    })
}

fn model_and_row() -> impl Strategy<Value = (FmModel, DesignRow)> {
    (2usize..30, prop::sample::select(vec![1usize, 2, 8])).prop_flat_map(|(width, k)| {
        (
            prop::collection::vec(-2.0f64..2.0, width),
            prop::collection::vec(-2.0f64..2.0, width * k),
            prop::sample::subsequence((0..width).collect::<Vec<_>>(), 1..=width.min(8)),
            prop::collection::vec(-3.0f64..3.0, 8),
        )
            .prop_map(move |(w, v, idx, vals)| {
                let mut m = FmModel::zeros(width, k);
                m.w = w;
                m.v = v;
                let values = vals[..idx.len()].to_vec();
                let row = DesignRow::new(idx.into_iter().map(|i| i as u32).collect(), values, 0.0)
                    .unwrap();
                (m, row)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_records(data in dataset_strategy(), observed in 1u32..10, seed in 0u64..1000) {
        let floor = 20;
        let spec = SplitSpec {
            test_fraction: 0.3,
            observed_levels: observed,
            eval_level_floor: floor,
            min_history: Some(floor + 5),
            seed,
        };
        let Ok(split) = split_players(&data, &spec) else {
            return Ok(());
        };
        for r in split.test.records() {
            prop_assert!(split.test_players.contains(&r.player_id));
            prop_assert!(r.level_id > floor);
        }
        for r in split.gap.records() {
            prop_assert!(split.test_players.contains(&r.player_id));
            prop_assert!(r.level_id > observed && r.level_id <= floor);
        }
        let mut seen = BTreeSet::new();
        for r in split.train.records().iter().chain(split.gap.records()).chain(split.test.records()) {
            prop_assert!(seen.insert((r.player_id.clone(), r.level_id)), "record on two sides");
        }
        for r in split.train.records() {
            if split.test_players.contains(&r.player_id) {
                prop_assert!(r.level_id <= observed);
            }
        }
        // every record of an eligible player lands on exactly one side
        let eligible: BTreeSet<&str> = data
            .by_player()
            .filter(|(_, rs)| rs.len() as u32 >= floor + 5)
            .map(|(p, _)| p)
            .collect();
        let expected: BTreeSet<(String, u32)> = data
            .records()
            .iter()
            .filter(|r| eligible.contains(r.player_id.as_str()))
            .map(|r| (r.player_id.clone(), r.level_id))
            .collect();
        prop_assert_eq!(&seen, &expected);
        for p in &split.test_players {
            prop_assert!(eligible.contains(p.as_str()));
        }
    }

    #[test]
    fn spearman_rank_invariance(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..60),
        scale in 0.1f64..10.0,
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(rho) = spearman(&a, &b) {
            prop_assert!((-1.0..=1.0).contains(&rho));
            let ta: Vec<f64> = a.iter().map(|x| (x / 50.0).exp() * scale).collect();
            let tb: Vec<f64> = b.iter().map(|x| x.powi(3) + 7.0).collect();
            prop_assert!((spearman(&ta, &tb).unwrap() - rho).abs() < 1e-12);
            let neg: Vec<f64> = a.iter().map(|x| -x).collect();
            prop_assert!((spearman(&neg, &b).unwrap() + rho).abs() < 1e-12);
        }
    }

    #[test]
    fn fm_matches_pairwise_sum((m, row) in model_and_row()) {
        let pairs: Vec<(usize, f64)> = row.iter().collect();
        let mut slow: f64 = pairs.iter().map(|&(i, x)| m.w[i] * x).sum();
        for a in 0..pairs.len() {
            for b in a + 1..pairs.len() {
                let dot: f64 = (0..m.k).map(|f| m.factor(pairs[a].0, f) * m.factor(pairs[b].0, f)).sum();
                slow += dot * pairs[a].1 * pairs[b].1;
            }
        }
        let fast = m.predict(&row).unwrap();
        prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0));
    }

    #[test]
    fn factor_sign_symmetry((m, row) in model_and_row(), f in 0usize..8) {
        let mut flipped = m.clone();
        flipped.flip_factor(f % m.k);
        let a = m.predict(&row).unwrap();
        let b = flipped.predict(&row).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn entropy_bounds(w in prop::collection::vec(0.0f64..10.0, 1..12)) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let h = color_entropy(&w).unwrap();
        let max = (w.len() as f64).ln();
        prop_assert!(h >= -1e-12 && h <= max + 1e-12);
        let uniform = color_entropy(&vec![1.0; w.len()]).unwrap();
        prop_assert!((uniform - max).abs() < 1e-12);
        let all_equal = w.iter().all(|x| (x - w[0]).abs() < 1e-12);
        if !all_equal && w.iter().all(|x| *x > 0.0) {
            prop_assert!(h < max - 1e-12);
        }
    }

    #[test]
    fn rolling_mean_of_constant(c in -50.0f64..50.0, n in 1usize..200, window in 1usize..30) {
        for v in rolling_mean(&vec![c; n], window) {
            prop_assert!((v - c).abs() <= 1e-9 * c.abs().max(1.0));
        }
    }

    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..100)) {
        let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        let t: Vec<f64> = pairs.iter().map(|x| x.1).collect();
        let (m, r) = (mae(&p, &t).unwrap(), rmse(&p, &t).unwrap());
        prop_assert!(m >= 0.0);
        prop_assert!(r >= m - 1e-12);
    }
}
