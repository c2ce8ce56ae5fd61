//! Bayesian factorization machine trained by Gibbs sampling.
//!
//! Likelihood `y ~ N(y_hat, 1/alpha)`. Every parameter group `g` has a
//! Normal prior `theta ~ N(mu_g, 1/lambda_g)` with a Normal-Gamma hyperprior
//! on `(mu_g, lambda_g)`, and `alpha` has a Gamma hyperprior. One sweep draws
//! `alpha`, then the `w` group hyperparameters and each `w_i` in column order,
//! then for each factor `f` its hyperparameters and each `v_{i,f}`.
//!
//! Because the prediction is affine in every single parameter
//! (`y_hat = g + h * theta`), each conditional is Gaussian. The sampler keeps
//! per-row errors `e = y_hat - y` and per-row factor sums `q_f` up to date
//! incrementally, so a sweep costs O(nnz * k).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{DesignRow, FeatureSchema};
use crate::fm::{FmModel, Param};

/// Factor counts the trainer accepts.
pub const FACTOR_CHOICES: [usize; 6] = [1, 2, 4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Standard deviation of the initial factor draws.
    pub init_stdev: f64,
    pub factors: usize,
    pub seed: u64,
    /// One hyperprior group per schema block instead of one for all columns.
    pub block_groups: bool,
    /// Keep the noise precision fixed instead of sampling it.
    pub fixed_alpha: Option<f64>,
    /// Recompute cached errors from scratch every this many sweeps (0 = never).
    pub resync_every: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 1000,
            burn_in: 50,
            init_stdev: 1.0,
            factors: 2,
            seed: 0,
            block_groups: false,
            fixed_alpha: None,
            resync_every: 50,
        }
    }
}

impl McmcConfig {
    /// Settings used for rows augmented with descriptive features.
    pub fn augmented() -> Self {
        McmcConfig {
            init_stdev: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if !(self.init_stdev > 0.0 && self.init_stdev.is_finite()) {
            return Err(Error::Config("init_stdev must be positive".into()));
        }
        if !FACTOR_CHOICES.contains(&self.factors) {
            return Err(Error::Config(format!(
                "factor count {} not in {FACTOR_CHOICES:?}",
                self.factors
            )));
        }
        if let Some(a) = self.fixed_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config("fixed_alpha must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Hyperprior constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperpriors {
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    pub lambda_shape: f64,
    pub lambda_rate: f64,
    pub mu0: f64,
    pub gamma0: f64,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Hyperpriors {
            alpha_shape: 1.0,
            alpha_rate: 1.0,
            lambda_shape: 1.0,
            lambda_rate: 1.0,
            mu0: 0.0,
            gamma0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupPrior {
    pub mu: f64,
    pub lambda: f64,
}

impl Default for GroupPrior {
    fn default() -> Self {
        GroupPrior {
            mu: 0.0,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    pub alpha: f64,
    /// `w` prior per group.
    pub w: Vec<GroupPrior>,
    /// `v` prior per group and factor: `v[group][f]`.
    pub v: Vec<Vec<GroupPrior>>,
}

impl HyperState {
    pub fn new(groups: usize, k: usize) -> Self {
        HyperState {
            alpha: 1.0,
            w: vec![GroupPrior::default(); groups],
            v: vec![vec![GroupPrior::default(); k]; groups],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.alpha > 0.0
            && self
                .w
                .iter()
                .chain(self.v.iter().flatten())
                .all(|g| g.lambda > 0.0 && g.mu.is_finite())
    }
}

/// Running mean of test predictions over post-burn-in draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    pub mean: Vec<f64>,
    pub draws: usize,
}

impl PosteriorPrediction {
    fn new(n: usize) -> Self {
        PosteriorPrediction {
            mean: vec![0.0; n],
            draws: 0,
        }
    }

    fn add_draw(&mut self, preds: &[f64]) {
        self.draws += 1;
        let inv = 1.0 / self.draws as f64;
        for (m, p) in self.mean.iter_mut().zip(preds) {
            *m += (p - *m) * inv;
        }
    }

    pub fn clamped(&self) -> Vec<f64> {
        self.mean
            .iter()
            .map(|&y| crate::fm::clamp_prediction(y))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub train_rmse: f64,
    pub alpha: f64,
    pub elapsed_ms: u128,
}

pub fn write_training_log<W: std::io::Write>(log: &[LogEntry], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in log {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Training rows in both row-major and column-major sparse form.
#[derive(Debug, Clone)]
pub struct TrainData {
    width: usize,
    targets: Vec<f64>,
    row_ptr: Vec<usize>,
    row_cols: Vec<u32>,
    row_vals: Vec<f64>,
    col_ptr: Vec<usize>,
    col_rows: Vec<u32>,
    col_vals: Vec<f64>,
}

impl TrainData {
    pub fn new(rows: &[DesignRow], width: usize) -> Result<Self> {
        if rows.len() > u32::MAX as usize {
            return Err(Error::Contract("too many training rows".into()));
        }
        let nnz: usize = rows.iter().map(DesignRow::nnz).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut row_cols = Vec::with_capacity(nnz);
        let mut row_vals = Vec::with_capacity(nnz);
        let mut counts = vec![0usize; width + 1];
        row_ptr.push(0);
        for r in rows {
            for (i, x) in r.iter() {
                if i >= width {
                    return Err(Error::Contract(format!(
                        "row index {i} out of range for schema width {width}"
                    )));
                }
                row_cols.push(i as u32);
                row_vals.push(x);
                counts[i + 1] += 1;
            }
            row_ptr.push(row_cols.len());
        }
        for j in 0..width {
            counts[j + 1] += counts[j];
        }
        let col_ptr = counts;
        let mut fill = col_ptr.clone();
        let mut col_rows = vec![0u32; nnz];
        let mut col_vals = vec![0.0; nnz];
        for (r, w) in row_ptr.windows(2).enumerate() {
            for p in w[0]..w[1] {
                let j = row_cols[p] as usize;
                col_rows[fill[j]] = r as u32;
                col_vals[fill[j]] = row_vals[p];
                fill[j] += 1;
            }
        }
        Ok(TrainData {
            width,
            targets: rows.iter().map(|r| r.target).collect(),
            row_ptr,
            row_cols,
            row_vals,
            col_ptr,
            col_rows,
            col_vals,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.row_cols[a..b]
            .iter()
            .zip(&self.row_vals[a..b])
            .map(|(i, x)| (*i as usize, *x))
    }

    fn column(&self, j: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.col_rows[a..b], &self.col_vals[a..b])
    }
}

/// Column group assignment from schema blocks: players, levels, player
/// features, level features.
pub fn schema_groups(schema: &FeatureSchema) -> Vec<usize> {
    let mut g = vec![0; schema.width()];
    for (block, range) in [
        schema.player_block(),
        schema.level_block(),
        schema.player_feature_block(),
        schema.level_feature_block(),
    ]
    .into_iter()
    .enumerate()
    {
        for j in range {
            g[j] = block;
        }
    }
    // compact ids so that empty blocks do not create empty groups
    let mut used: Vec<usize> = g.clone();
    used.sort_unstable();
    used.dedup();
    g.iter()
        .map(|b| used.binary_search(b).expect("present"))
        .collect()
}

/// Mean and variance of the Gaussian conditional of one parameter.
///
/// `sum_hh = sum h^2` and `sum_he = sum h * (h * theta_old - e)` over the rows.
pub fn conditional_normal(sum_hh: f64, sum_he: f64, alpha: f64, prior: GroupPrior) -> (f64, f64) {
    let var = 1.0 / (alpha * sum_hh + prior.lambda);
    let mean = var * (alpha * sum_he + prior.lambda * prior.mu);
    (mean, var)
}

/// Draws `w = 0`, `V ~ N(0, init_stdev^2)`.
pub fn init_model(schema_width: usize, config: &McmcConfig) -> FmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_with(schema_width, config, &mut rng)
}

fn init_with(schema_width: usize, config: &McmcConfig, rng: &mut ChaCha8Rng) -> FmModel {
    let mut model = FmModel::zeros(schema_width, config.factors);
    for v in model.v.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = config.init_stdev * z;
    }
    model
}

fn gamma(rng: &mut ChaCha8Rng, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters are positive")
        .sample(rng)
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, var: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    mean + var.sqrt() * z
}

/// Gibbs sampler state over one training set.
pub struct GibbsSampler<'a> {
    data: &'a TrainData,
    model: FmModel,
    hyper: HyperState,
    priors: Hyperpriors,
    groups: Vec<usize>,
    group_sizes: Vec<usize>,
    fixed_alpha: Option<f64>,
    errors: Vec<f64>,
    /// `q[f][row]`
    q: Vec<Vec<f64>>,
    scratch: Vec<f64>,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(
        data: &'a TrainData,
        config: &McmcConfig,
        groups: Option<Vec<usize>>,
    ) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Protocol("training set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = init_with(data.width(), config, &mut rng);
        Self::from_parts(data, model, groups, config.fixed_alpha, rng)
    }

    /// Sampler starting from an explicit model.
    pub fn from_model(
        data: &'a TrainData,
        model: FmModel,
        groups: Option<Vec<usize>>,
        fixed_alpha: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Protocol("training set is empty".into()));
        }
        if model.schema_width != data.width() {
            return Err(Error::Contract(format!(
                "model width {} does not match data width {}",
                model.schema_width,
                data.width()
            )));
        }
        Self::from_parts(
            data,
            model,
            groups,
            fixed_alpha,
            ChaCha8Rng::seed_from_u64(seed),
        )
    }

    fn from_parts(
        data: &'a TrainData,
        model: FmModel,
        groups: Option<Vec<usize>>,
        fixed_alpha: Option<f64>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let groups = groups.unwrap_or_else(|| vec![0; data.width()]);
        if groups.len() != data.width() {
            return Err(Error::Contract(
                "group map length differs from schema width".into(),
            ));
        }
        let n_groups = groups.iter().max().map_or(1, |m| m + 1);
        let mut group_sizes = vec![0; n_groups];
        for &g in &groups {
            group_sizes[g] += 1;
        }
        let k = model.k;
        let mut hyper = HyperState::new(n_groups, k);
        if let Some(a) = fixed_alpha {
            hyper.alpha = a;
        }
        let mut s = GibbsSampler {
            data,
            model,
            hyper,
            priors: Hyperpriors::default(),
            groups,
            group_sizes,
            fixed_alpha,
            errors: vec![0.0; data.len()],
            q: vec![vec![0.0; data.len()]; k],
            scratch: Vec::new(),
            rng,
            iteration: 0,
        };
        s.resync();
        Ok(s)
    }

    pub fn model(&self) -> &FmModel {
        &self.model
    }

    pub fn hyper(&self) -> &HyperState {
        &self.hyper
    }

    pub fn set_hyper(&mut self, hyper: HyperState) -> Result<()> {
        if hyper.w.len() != self.group_sizes.len() || !hyper.is_valid() {
            return Err(Error::Contract(
                "hyperparameter state does not fit the sampler".into(),
            ));
        }
        self.hyper = hyper;
        Ok(())
    }

    /// Cached `prediction - target` per training row.
    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn factor_sums(&self) -> &[Vec<f64>] {
        &self.q
    }

    pub fn train_rmse(&self) -> f64 {
        (self.errors.iter().map(|e| e * e).sum::<f64>() / self.errors.len() as f64).sqrt()
    }

    /// Errors and factor sums recomputed from the current model.
    pub fn recompute(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.data.len();
        let k = self.model.k;
        let mut e = vec![0.0; n];
        let mut q = vec![vec![0.0; n]; k];
        for r in 0..n {
            let mut lin = self.model.w0;
            let mut pair = 0.0;
            let mut sq = vec![0.0; k];
            for (i, x) in self.data.row(r) {
                lin += self.model.w[i] * x;
                for f in 0..k {
                    let t = self.model.factor(i, f) * x;
                    q[f][r] += t;
                    sq[f] += t * t;
                }
            }
            for f in 0..k {
                pair += q[f][r] * q[f][r] - sq[f];
            }
            e[r] = lin + 0.5 * pair - self.data.targets[r];
        }
        (e, q)
    }

    pub fn resync(&mut self) {
        let (e, q) = self.recompute();
        self.errors = e;
        self.q = q;
    }

    fn divergence(&self, parameter: String) -> Error {
        Error::Divergence {
            iteration: self.iteration,
            parameter,
        }
    }

    fn sample_alpha(&mut self) -> Result<()> {
        if let Some(a) = self.fixed_alpha {
            self.hyper.alpha = a;
            return Ok(());
        }
        let sse: f64 = self.errors.iter().map(|e| e * e).sum();
        if !sse.is_finite() {
            return Err(self.divergence("alpha (non-finite residual)".into()));
        }
        let p = &self.priors;
        let shape = (p.alpha_shape + self.errors.len() as f64) / 2.0;
        let rate = (p.alpha_rate + sse) / 2.0;
        self.hyper.alpha = gamma(&mut self.rng, shape, rate);
        Ok(())
    }

    /// Draws `(mu, lambda)` for every group given parameter values `theta(j)`.
    fn sample_group_priors(
        &mut self,
        previous: &[GroupPrior],
        theta: impl Fn(&FmModel, usize) -> f64,
    ) -> Vec<GroupPrior> {
        let n_groups = self.group_sizes.len();
        let mut sum = vec![0.0; n_groups];
        for j in 0..self.model.schema_width {
            sum[self.groups[j]] += theta(&self.model, j);
        }
        let p = self.priors;
        let mut out = Vec::with_capacity(n_groups);
        for g in 0..n_groups {
            let n = self.group_sizes[g] as f64;
            // mu | lambda
            let mu_var = 1.0 / ((n + p.gamma0) * previous[g].lambda);
            let mu_mean = (sum[g] + p.gamma0 * p.mu0) / (n + p.gamma0);
            let mu = normal(&mut self.rng, mu_mean, mu_var);
            // lambda | mu
            let mut ss = p.gamma0 * (mu - p.mu0) * (mu - p.mu0);
            for j in 0..self.model.schema_width {
                if self.groups[j] == g {
                    let d = theta(&self.model, j) - mu;
                    ss += d * d;
                }
            }
            let lambda = gamma(
                &mut self.rng,
                (p.lambda_shape + n + 1.0) / 2.0,
                (p.lambda_rate + ss) / 2.0,
            );
            out.push(GroupPrior { mu, lambda });
        }
        out
    }

    /// One full Gibbs sweep.
    pub fn sweep(&mut self) -> Result<()> {
        self.iteration += 1;
        self.sample_alpha()?;
        let alpha = self.hyper.alpha;

        let previous = self.hyper.w.clone();
        self.hyper.w = self.sample_group_priors(&previous, |m, j| m.w[j]);
        self.check_hyper()?;

        for j in 0..self.model.schema_width {
            let (rows, vals) = self.data.column(j);
            let theta = self.model.w[j];
            let mut sum_hh = 0.0;
            let mut sum_he = 0.0;
            for (&r, &x) in rows.iter().zip(vals) {
                sum_hh += x * x;
                sum_he += x * (x * theta - self.errors[r as usize]);
            }
            let prior = self.hyper.w[self.groups[j]];
            let (mean, var) = conditional_normal(sum_hh, sum_he, alpha, prior);
            let new = normal(&mut self.rng, mean, var);
            if !new.is_finite() {
                return Err(self.divergence(Param::W(j).to_string()));
            }
            let delta = new - theta;
            for (&r, &x) in rows.iter().zip(vals) {
                self.errors[r as usize] += x * delta;
            }
            self.model.w[j] = new;
        }

        let k = self.model.k;
        for f in 0..k {
            let previous: Vec<GroupPrior> = self.hyper.v.iter().map(|g| g[f]).collect();
            let priors = self.sample_group_priors(&previous, |m, j| m.factor(j, f));
            for (g, p) in priors.into_iter().enumerate() {
                self.hyper.v[g][f] = p;
            }
            self.check_hyper()?;

            let qf = &mut self.q[f];
            for j in 0..self.model.schema_width {
                let (rows, vals) = self.data.column(j);
                let theta = self.model.v[j * k + f];
                self.scratch.clear();
                let mut sum_hh = 0.0;
                let mut sum_he = 0.0;
                for (&r, &x) in rows.iter().zip(vals) {
                    let r = r as usize;
                    let h = x * (qf[r] - theta * x);
                    sum_hh += h * h;
                    sum_he += h * (h * theta - self.errors[r]);
                    self.scratch.push(h);
                }
                let prior = self.hyper.v[self.groups[j]][f];
                let (mean, var) = conditional_normal(sum_hh, sum_he, alpha, prior);
                let z: f64 = self.rng.sample(StandardNormal);
                let new = mean + var.sqrt() * z;
                if !new.is_finite() {
                    return Err(Error::Divergence {
                        iteration: self.iteration,
                        parameter: Param::V(j, f).to_string(),
                    });
                }
                let delta = new - theta;
                for ((&r, &x), &h) in rows.iter().zip(vals).zip(&self.scratch) {
                    let r = r as usize;
                    self.errors[r] += h * delta;
                    qf[r] += x * delta;
                }
                self.model.v[j * k + f] = new;
            }
        }
        Ok(())
    }

    fn check_hyper(&self) -> Result<()> {
        if self.hyper.is_valid() {
            Ok(())
        } else {
            Err(self.divergence("hyperparameters".into()))
        }
    }
}

/// Output of [`train_predict`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameter means over the post-burn-in draws.
    pub model: FmModel,
    /// Last draw.
    pub last_draw: FmModel,
    pub hyper: HyperState,
    pub predictions: PosteriorPrediction,
    pub log: Vec<LogEntry>,
}

/// Runs the sampler and averages test predictions over post-burn-in draws.
pub fn train_predict(
    train: &[DesignRow],
    test: &[DesignRow],
    width: usize,
    config: &McmcConfig,
) -> Result<TrainOutcome> {
    train_predict_grouped(train, test, width, None, config)
}

pub fn train_predict_grouped(
    train: &[DesignRow],
    test: &[DesignRow],
    width: usize,
    groups: Option<Vec<usize>>,
    config: &McmcConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Protocol("training set is empty".into()));
    }
    let data = TrainData::new(train, width)?;
    for r in test {
        if r.indices.last().is_some_and(|&i| i as usize >= width) {
            return Err(Error::Contract("test row index out of range".into()));
        }
    }
    let mut sampler = GibbsSampler::new(&data, config, groups)?;
    let started = Instant::now();
    let mut predictions = PosteriorPrediction::new(test.len());
    let mut param_sum = FmModel::zeros(width, config.factors);
    let mut draw = vec![0.0; test.len()];
    let mut log = Vec::with_capacity(config.iterations);

    for it in 1..=config.iterations {
        sampler.sweep()?;
        if config.resync_every > 0 && it % config.resync_every == 0 {
            sampler.resync();
        }
        log.push(LogEntry {
            iteration: it,
            train_rmse: sampler.train_rmse(),
            alpha: sampler.hyper().alpha,
            elapsed_ms: started.elapsed().as_millis(),
        });
        if it > config.burn_in {
            let m = sampler.model();
            for (d, row) in draw.iter_mut().zip(test) {
                *d = m.predict_unchecked(row);
            }
            if draw.iter().any(|d| !d.is_finite()) {
                return Err(Error::Divergence {
                    iteration: it,
                    parameter: "test prediction".into(),
                });
            }
            predictions.add_draw(&draw);
            for (s, w) in param_sum.w.iter_mut().zip(&m.w) {
                *s += w;
            }
            for (s, v) in param_sum.v.iter_mut().zip(&m.v) {
                *s += v;
            }
        }
    }
    let n = predictions.draws as f64;
    param_sum.w.iter_mut().for_each(|w| *w /= n);
    param_sum.v.iter_mut().for_each(|v| *v /= n);
    Ok(TrainOutcome {
        model: param_sum,
        last_draw: sampler.model().clone(),
        hyper: sampler.hyper().clone(),
        predictions,
        log,
    })
}
