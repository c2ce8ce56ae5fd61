//! Observed-level sweeps, error metrics, confidence intervals and per-level
//! error curves.
//!
//! For every seed the player split is drawn once; each checkpoint `n` then
//! re-splits with `observed_levels = n`, which keeps the test players and the
//! evaluated records fixed while giving the models more of the test players'
//! history. Metrics are computed on levels above the evaluation floor; the
//! per-level curves additionally cover the unobserved levels below it.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::baselines::{fit_forest, fit_naive, predict_naive, ForestConfig};
use crate::dataset::{
    split_players, Dataset, InteractionRecord, LevelId, PlayerId, Split, SplitSpec,
};
use crate::error::{Error, Result};
use crate::features::{
    build_fm_rows, build_rf_matrix, FeatureSchema, FeatureSet, LevelAttributes, Telemetry,
};
use crate::fm::FmModel;
use crate::trainer::{schema_groups, train_predict_grouped, McmcConfig, FACTOR_CHOICES};

const Z95: f64 = 1.959_963_984_540_054;

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions but {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract(
            "metrics need at least one prediction".into(),
        ));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Normal-approximation interval `mean +- 1.96 sd / sqrt(n)`.
pub fn normal_ci(values: &[f64]) -> (f64, f64) {
    let (mean, sd) = mean_and_sd(values);
    let half = Z95 * sd / (values.len() as f64).sqrt();
    (mean - half, mean + half)
}

/// Student-t interval over a handful of replicates; `None` below three.
pub fn t_ci(values: &[f64]) -> Option<(f64, f64)> {
    if values.len() < 3 {
        return None;
    }
    let (mean, sd) = mean_and_sd(values);
    let df = values.len() as f64 - 1.0;
    let t = StudentsT::new(0.0, 1.0, df).ok()?.inverse_cdf(0.975);
    let half = t * sd / (values.len() as f64).sqrt();
    Some((mean - half, mean + half))
}

fn sqrt_interval((lo, hi): (f64, f64)) -> (f64, f64) {
    (lo.max(0.0).sqrt(), hi.max(0.0).sqrt())
}

/// Per-row interval for the MAE.
pub fn mae_ci(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    check_lengths(pred, truth)?;
    let errs: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    Ok(normal_ci(&errs))
}

/// Per-row interval on the mean squared error, mapped through the square root.
pub fn rmse_ci(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    check_lengths(pred, truth)?;
    let errs: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).powi(2))
        .collect();
    Ok(sqrt_interval(normal_ci(&errs)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    Rf,
    Fm,
    FmFeat,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Naive, Method::Rf, Method::Fm, Method::FmFeat];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Rf => "rf",
            Method::Fm => "fm",
            Method::FmFeat => "fm_feat",
        }
    }

    /// Methods that read level attributes / telemetry.
    pub fn needs_features(self) -> bool {
        matches!(self, Method::Rf | Method::FmFeat)
    }

    pub fn is_fm(self) -> bool {
        matches!(self, Method::Fm | Method::FmFeat)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "rf" => Ok(Method::Rf),
            "fm" => Ok(Method::Fm),
            "fm_feat" | "fm-feat" => Ok(Method::FmFeat),
            other => Err(Error::Config(format!(
                "unknown method {other:?}; expected naive, rf, fm or fm_feat"
            ))),
        }
    }
}

/// One (method, factor count, checkpoint) cell. `k` is 0 for methods
/// without factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub method: Method,
    pub k: usize,
    pub checkpoint: LevelId,
}

impl CellKey {
    /// Label used in file names: `naive`, `rf`, `fm-k2`, `fm_feat-k4`.
    pub fn label(&self) -> String {
        if self.method.is_fm() {
            format!("{}-k{}", self.method, self.k)
        } else {
            self.method.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub checkpoints: Vec<LevelId>,
    pub methods: Vec<Method>,
    pub factor_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Sampler settings for plain FM; `factors` and `seed` are set per cell.
    pub mcmc: McmcConfig,
    /// Sampler settings for FM with side features.
    pub mcmc_feat: McmcConfig,
    pub forest: ForestConfig,
    /// Rolling-mean window of the per-level curves.
    pub window: usize,
    /// Keep the fitted FM models in the outcome.
    pub keep_models: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            checkpoints: vec![10, 20, 30, 50, 100, 150],
            methods: vec![Method::Naive, Method::Fm],
            factor_counts: vec![2],
            seeds: vec![0],
            mcmc: McmcConfig::default(),
            mcmc_feat: McmcConfig::augmented(),
            forest: ForestConfig::default(),
            window: 12,
            keep_models: false,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self, split: &SplitSpec) -> Result<()> {
        if self.checkpoints.is_empty() {
            return Err(Error::Config("at least one checkpoint is required".into()));
        }
        if self.checkpoints[0] == 0 || self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "checkpoints must be positive and strictly increasing, got {:?}",
                self.checkpoints
            )));
        }
        let last = *self.checkpoints.last().expect("non-empty");
        if last > split.eval_level_floor {
            return Err(Error::Config(format!(
                "checkpoint {last} exceeds the evaluation floor {}",
                split.eval_level_floor
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.methods.iter().any(|m| m.is_fm()) {
            if self.factor_counts.is_empty() {
                return Err(Error::Config(
                    "FM methods need at least one factor count".into(),
                ));
            }
            if let Some(k) = self
                .factor_counts
                .iter()
                .find(|k| !FACTOR_CHOICES.contains(k))
            {
                return Err(Error::Config(format!(
                    "factor count {k} not in {FACTOR_CHOICES:?}"
                )));
            }
            self.mcmc.validate()?;
            self.mcmc_feat.validate()?;
        }
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(Method, usize)> {
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        let mut ks = self.factor_counts.clone();
        ks.sort();
        ks.dedup();
        let mut out = Vec::new();
        for m in methods {
            if m.is_fm() {
                out.extend(ks.iter().map(|&k| (m, k)));
            } else {
                out.push((m, 0));
            }
        }
        out
    }
}

/// Side inputs for the feature-augmented methods.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeatureInputs<'a> {
    pub levels: Option<&'a [LevelAttributes]>,
    pub telemetry: Option<&'a Telemetry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Unobserved level below the evaluation floor.
    Gap,
    /// Level above the evaluation floor; the only rows that enter metrics.
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub player_id: PlayerId,
    pub level_id: LevelId,
    pub truth: f64,
    pub pred: f64,
    pub seed: u64,
    pub scope: Scope,
}

/// Raw predictions of one cell, pooled over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPredictions {
    pub key: CellKey,
    pub rows: Vec<PredictionRow>,
}

impl CellPredictions {
    pub fn test_rows(&self) -> impl Iterator<Item = &PredictionRow> {
        self.rows.iter().filter(|r| r.scope == Scope::Test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub method: Method,
    pub k: usize,
    pub checkpoint: LevelId,
    pub mae: f64,
    pub rmse: f64,
    /// Per-row normal interval, pooled over seeds.
    pub ci95_mae: (f64, f64),
    pub ci95_rmse: (f64, f64),
    /// Student-t interval over per-seed values, with three or more seeds.
    pub seed_ci95_mae: Option<(f64, f64)>,
    pub seed_ci95_rmse: Option<(f64, f64)>,
    pub n_test_rows: usize,
    pub per_seed: Vec<SeedMetrics>,
}

impl CellMetrics {
    pub fn key(&self) -> CellKey {
        CellKey {
            method: self.method,
            k: self.k,
            checkpoint: self.checkpoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub level: LevelId,
    /// Method MAE minus baseline MAE at this level.
    pub raw_diff: f64,
    pub smoothed_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCurve {
    pub method: Method,
    pub k: usize,
    pub checkpoint: LevelId,
    pub points: Vec<CurvePoint>,
}

impl LevelCurve {
    /// Mean smoothed difference over levels in `range`; `None` if none fall in it.
    pub fn mean_smoothed(&self, range: impl std::ops::RangeBounds<LevelId>) -> Option<f64> {
        let vals: Vec<f64> = self
            .points
            .iter()
            .filter(|p| range.contains(&p.level))
            .map(|p| p.smoothed_diff)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub eval_level_floor: LevelId,
    pub seeds: Vec<u64>,
    pub window: usize,
    pub cells: Vec<CellMetrics>,
    pub curves: Vec<LevelCurve>,
}

impl EvaluationReport {
    pub fn cell(&self, method: Method, k: usize, checkpoint: LevelId) -> Option<&CellMetrics> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.k == k && c.checkpoint == checkpoint)
    }

    pub fn curve(&self, method: Method, k: usize, checkpoint: LevelId) -> Option<&LevelCurve> {
        self.curves
            .iter()
            .find(|c| c.method == method && c.k == k && c.checkpoint == checkpoint)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Posterior-mean FM of one cell and seed, with the schema it was trained under.
#[derive(Debug, Clone)]
pub struct FittedFm {
    pub key: CellKey,
    pub seed: u64,
    pub model: FmModel,
    pub schema: FeatureSchema,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: EvaluationReport,
    pub predictions: Vec<CellPredictions>,
    pub models: Vec<FittedFm>,
}

impl SweepOutcome {
    pub fn predictions_for(&self, key: CellKey) -> Option<&CellPredictions> {
        self.predictions.iter().find(|c| c.key == key)
    }
}

/// Training records of non-test players: what the naive baseline may see.
pub fn reference_train(split: &Split) -> Result<Dataset> {
    Dataset::new(
        split
            .train
            .records()
            .iter()
            .filter(|r| !split.test_players.contains(&r.player_id))
            .cloned()
            .collect(),
    )
}

/// Rows for the gap then test records of `split`, in that order.
pub fn prediction_rows(
    split: &Split,
    seed: u64,
    preds: impl IntoIterator<Item = f64>,
) -> Vec<PredictionRow> {
    let scoped = split
        .gap
        .records()
        .iter()
        .map(|r| (r, Scope::Gap))
        .chain(split.test.records().iter().map(|r| (r, Scope::Test)));
    scoped
        .zip(preds)
        .map(
            |((r, scope), pred): ((&InteractionRecord, Scope), f64)| PredictionRow {
                player_id: r.player_id.clone(),
                level_id: r.level_id,
                truth: r.attempts as f64,
                pred,
                seed,
                scope,
            },
        )
        .collect()
}

type JobOutput = Vec<(CellKey, Vec<PredictionRow>, Option<FittedFm>)>;

fn run_job(
    data: &Dataset,
    spec: &SweepSpec,
    split_spec: &SplitSpec,
    inputs: FeatureInputs<'_>,
    cells: &[(Method, usize)],
    seed: u64,
    checkpoint: LevelId,
) -> Result<JobOutput> {
    let split = split_players(
        data,
        &SplitSpec {
            observed_levels: checkpoint,
            seed,
            ..split_spec.clone()
        },
    )?;
    log::info!(
        "seed {seed} checkpoint {checkpoint}: {} train rows, {} test players",
        split.train.len(),
        split.test_players.len()
    );
    let mut out = Vec::new();
    let mut plain: Option<FeatureSet> = None;
    let mut augmented: Option<FeatureSet> = None;
    for &(method, k) in cells {
        let key = CellKey {
            method,
            k,
            checkpoint,
        };
        match method {
            Method::Naive => {
                let model = fit_naive(&reference_train(&split)?);
                let preds = split
                    .unobserved()
                    .map(|r| predict_naive(&model, r.level_id));
                out.push((key, prediction_rows(&split, seed, preds), None));
            }
            Method::Rf => {
                if augmented.is_none() {
                    augmented = Some(FeatureSet::build(
                        &split,
                        inputs.levels,
                        inputs.telemetry,
                        true,
                    )?);
                }
                let fs = augmented.as_ref().expect("built above");
                let m = build_rf_matrix(&split, fs)?;
                let forest = fit_forest(
                    &m.train.x,
                    &m.train.y,
                    &ForestConfig {
                        seed,
                        ..spec.forest.clone()
                    },
                )?;
                let mut preds = forest.predict_matrix(&m.gap.x)?;
                preds.extend(forest.predict_matrix(&m.test.x)?);
                out.push((key, prediction_rows(&split, seed, preds), None));
            }
            Method::Fm | Method::FmFeat => {
                let feat = method == Method::FmFeat;
                let slot = if feat { &mut augmented } else { &mut plain };
                if slot.is_none() {
                    *slot = Some(if feat {
                        FeatureSet::build(&split, inputs.levels, inputs.telemetry, true)?
                    } else {
                        FeatureSet::build(&split, None, None, false)?
                    });
                }
                let fs = slot.as_ref().expect("built above");
                let rows = build_fm_rows(&split, fs)?;
                let mut unobserved = rows.gap;
                unobserved.extend(rows.test);
                let template = if feat { &spec.mcmc_feat } else { &spec.mcmc };
                let config = McmcConfig {
                    factors: k,
                    seed,
                    ..template.clone()
                };
                let groups = config.block_groups.then(|| schema_groups(&fs.schema));
                let fit = train_predict_grouped(
                    &rows.train,
                    &unobserved,
                    fs.schema.width(),
                    groups,
                    &config,
                )?;
                let fitted = spec.keep_models.then(|| FittedFm {
                    key,
                    seed,
                    model: fit.model.clone(),
                    schema: fs.schema.clone(),
                });
                out.push((
                    key,
                    prediction_rows(&split, seed, fit.predictions.clamped()),
                    fitted,
                ));
            }
        }
    }
    Ok(out)
}

/// Runs every requested cell for every seed and checkpoint.
pub fn run_sweep(
    data: &Dataset,
    spec: &SweepSpec,
    split_spec: &SplitSpec,
    inputs: FeatureInputs<'_>,
) -> Result<SweepOutcome> {
    spec.validate(split_spec)?;
    split_spec.validate()?;
    if let Some(m) = spec.methods.iter().find(|m| m.needs_features()) {
        if inputs.levels.is_none() {
            return Err(Error::Config(format!(
                "method {m} needs level attributes but none were given"
            )));
        }
    }
    let requested = spec.cells();
    // the baseline is always fitted: the per-level curves are measured against it
    let mut cells = requested.clone();
    if !cells.contains(&(Method::Naive, 0)) {
        cells.insert(0, (Method::Naive, 0));
    }

    let mut seeds = spec.seeds.clone();
    seeds.sort();
    seeds.dedup();
    let jobs: Vec<(u64, LevelId)> = seeds
        .iter()
        .flat_map(|&s| spec.checkpoints.iter().map(move |&c| (s, c)))
        .collect();
    let results: Vec<JobOutput> = jobs
        .par_iter()
        .map(|&(seed, ckpt)| run_job(data, spec, split_spec, inputs, &cells, seed, ckpt))
        .collect::<Result<_>>()?;

    let mut pooled: BTreeMap<CellKey, Vec<PredictionRow>> = BTreeMap::new();
    let mut models = Vec::new();
    for job in results {
        for (key, rows, model) in job {
            pooled.entry(key).or_default().extend(rows);
            models.extend(model);
        }
    }

    let mut metrics = Vec::new();
    let mut curves = Vec::new();
    for (key, rows) in &pooled {
        if key.method == Method::Naive && !requested.contains(&(Method::Naive, 0)) {
            continue;
        }
        metrics.push(cell_metrics(*key, rows, &seeds)?);
        if key.method != Method::Naive {
            let base = &pooled[&CellKey {
                method: Method::Naive,
                k: 0,
                checkpoint: key.checkpoint,
            }];
            curves.push(LevelCurve {
                method: key.method,
                k: key.k,
                checkpoint: key.checkpoint,
                points: per_level_error_curve(rows, base, spec.window)?,
            });
        }
    }
    let predictions = pooled
        .into_iter()
        .filter(|(key, _)| key.method != Method::Naive || requested.contains(&(Method::Naive, 0)))
        .map(|(key, rows)| CellPredictions { key, rows })
        .collect();

    Ok(SweepOutcome {
        report: EvaluationReport {
            eval_level_floor: split_spec.eval_level_floor,
            seeds,
            window: spec.window,
            cells: metrics,
            curves,
        },
        predictions,
        models,
    })
}

fn cell_metrics(key: CellKey, rows: &[PredictionRow], seeds: &[u64]) -> Result<CellMetrics> {
    let test: Vec<&PredictionRow> = rows.iter().filter(|r| r.scope == Scope::Test).collect();
    let pred: Vec<f64> = test.iter().map(|r| r.pred).collect();
    let truth: Vec<f64> = test.iter().map(|r| r.truth).collect();
    let mut per_seed = Vec::new();
    for &seed in seeds {
        let (p, t): (Vec<f64>, Vec<f64>) = test
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| (r.pred, r.truth))
            .unzip();
        per_seed.push(SeedMetrics {
            seed,
            mae: mae(&p, &t)?,
            rmse: rmse(&p, &t)?,
            n: p.len(),
        });
    }
    let seed_maes: Vec<f64> = per_seed.iter().map(|s| s.mae).collect();
    let seed_mses: Vec<f64> = per_seed.iter().map(|s| s.rmse * s.rmse).collect();
    Ok(CellMetrics {
        method: key.method,
        k: key.k,
        checkpoint: key.checkpoint,
        mae: mae(&pred, &truth)?,
        rmse: rmse(&pred, &truth)?,
        ci95_mae: mae_ci(&pred, &truth)?,
        ci95_rmse: rmse_ci(&pred, &truth)?,
        seed_ci95_mae: t_ci(&seed_maes),
        seed_ci95_rmse: t_ci(&seed_mses).map(sqrt_interval),
        n_test_rows: pred.len(),
        per_seed,
    })
}

/// Centered moving mean; windows are truncated at the series edges.
///
/// Position `i` averages `values[i - w/2 ..= i + w - 1 - w/2]`, the same
/// alignment as a centered rolling window with `min_periods = 1`.
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let window = window.max(1);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in values {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(window / 2);
            let hi = (i + window - 1 - window / 2).min(n - 1);
            let s: f64 = values[lo..=hi].iter().sum();
            s / (hi - lo + 1) as f64
        })
        .collect()
}

/// Per-level `MAE(method) - MAE(baseline)` over the rows both cover,
/// smoothed with [`rolling_mean`].
pub fn per_level_error_curve(
    method: &[PredictionRow],
    baseline: &[PredictionRow],
    window: usize,
) -> Result<Vec<CurvePoint>> {
    if window == 0 {
        return Err(Error::Contract("window must be positive".into()));
    }
    let base: HashMap<(u64, &str, LevelId), f64> = baseline
        .iter()
        .map(|r| {
            (
                (r.seed, r.player_id.as_str(), r.level_id),
                (r.pred - r.truth).abs(),
            )
        })
        .collect();
    let mut per_level: BTreeMap<LevelId, (f64, usize)> = BTreeMap::new();
    for r in method {
        let b = base
            .get(&(r.seed, r.player_id.as_str(), r.level_id))
            .ok_or_else(|| {
                Error::Contract(format!(
                    "baseline has no prediction for player {} level {} seed {}",
                    r.player_id, r.level_id, r.seed
                ))
            })?;
        let e = per_level.entry(r.level_id).or_default();
        e.0 += (r.pred - r.truth).abs() - b;
        e.1 += 1;
    }
    let (&first, _) = per_level
        .first_key_value()
        .ok_or_else(|| Error::Contract("no levels to build a curve from".into()))?;
    let (&last, _) = per_level.last_key_value().expect("non-empty");
    if (last - first) as usize + 1 != per_level.len() {
        return Err(Error::Contract(format!(
            "levels {first}..={last} are not contiguous"
        )));
    }
    let raw: Vec<f64> = per_level.values().map(|(s, n)| s / *n as f64).collect();
    let smooth = rolling_mean(&raw, window);
    Ok(per_level
        .keys()
        .zip(raw.iter().zip(smooth))
        .map(|(&level, (&raw_diff, smoothed_diff))| CurvePoint {
            level,
            raw_diff,
            smoothed_diff,
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sweep_metrics<W: Write>(report: &EvaluationReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "k",
        "checkpoint",
        "mae",
        "rmse",
        "ci_lo",
        "ci_hi",
        "rmse_ci_lo",
        "rmse_ci_hi",
        "seed_ci_lo",
        "seed_ci_hi",
        "seed_rmse_ci_lo",
        "seed_rmse_ci_hi",
        "n_test_rows",
    ])?;
    for c in &report.cells {
        w.write_record([
            c.method.to_string(),
            c.k.to_string(),
            c.checkpoint.to_string(),
            c.mae.to_string(),
            c.rmse.to_string(),
            c.ci95_mae.0.to_string(),
            c.ci95_mae.1.to_string(),
            c.ci95_rmse.0.to_string(),
            c.ci95_rmse.1.to_string(),
            opt(c.seed_ci95_mae.map(|c| c.0)),
            opt(c.seed_ci95_mae.map(|c| c.1)),
            opt(c.seed_ci95_rmse.map(|c| c.0)),
            opt(c.seed_ci95_rmse.map(|c| c.1)),
            c.n_test_rows.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_level_curves<W: Write>(curves: &[LevelCurve], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method",
        "k",
        "checkpoint",
        "level",
        "raw_diff",
        "smoothed_diff",
    ])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.method.to_string(),
                c.k.to_string(),
                c.checkpoint.to_string(),
                p.level.to_string(),
                p.raw_diff.to_string(),
                p.smoothed_diff.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// CSV `player_id,level_id,truth,pred,seed,scope`.
pub fn write_predictions<W: Write>(rows: &[PredictionRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<PredictionRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn prediction_file_name(key: &CellKey) -> String {
    format!("predictions_{}_{}.csv", key.label(), key.checkpoint)
}

/// Writes `report.json`, `sweep_metrics.csv`, `level_curve.csv` and one
/// prediction dump per cell; returns the paths written.
pub fn write_sweep_outputs(outcome: &SweepOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| -> Result<(PathBuf, BufWriter<File>)> {
        let p = dir.join(name);
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        Ok((p, BufWriter::new(f)))
    };
    let mut paths = Vec::new();

    let (p, mut f) = create("report.json")?;
    f.write_all(outcome.report.to_json()?.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(&p, e))?;
    paths.push(p);

    let (p, f) = create("sweep_metrics.csv")?;
    write_sweep_metrics(&outcome.report, f)?;
    paths.push(p);

    let (p, f) = create("level_curve.csv")?;
    write_level_curves(&outcome.report.curves, f)?;
    paths.push(p);

    for cell in &outcome.predictions {
        let (p, f) = create(&prediction_file_name(&cell.key))?;
        write_predictions(&cell.rows, f)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Recomputes a cell's MAE and RMSE from its prediction dump.
pub fn metrics_from_rows(rows: &[PredictionRow]) -> Result<(f64, f64)> {
    let (p, t): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.scope == Scope::Test)
        .map(|r| (r.pred, r.truth))
        .unzip();
    Ok((mae(&p, &t)?, rmse(&p, &t)?))
}
