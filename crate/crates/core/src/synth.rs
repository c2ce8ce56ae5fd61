//! Synthetic telemetry with known latent structure.
//!
//! Each player has a skill `s_u` and a consistency `c_u`; each level has a
//! difficulty `d_l` and a variance amplifier `a_l`. On top of the fixed skill,
//! a player's form fluctuates as they progress: `z_ul` is a stationary
//! Gaussian AR(1) process over levels, so what a model learns from a player's
//! early levels says less and less about levels far ahead. The per-attempt
//! success probability is
//!
//! ```text
//! p_ul = clamp(logistic(b0 - d_l + s_u + z_ul + gamma c_u a_l), p_min, 1)
//! ```
//!
//! and attempts to first completion are `1 + Geometric(p_ul)`. Raw attempts
//! are written out; loading them truncates at 30.
//! Level difficulty ramps up slowly with a periodic fluctuation and easy
//! tutorial levels (1-10, then every tenth level from 21 on).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Geometric, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, InteractionRecord, LevelId, PlayerId, Split, ATTEMPT_CAP};
use crate::error::{Error, Result};
use crate::eval::{mae, rmse};
use crate::features::{
    color_entropy, write_level_attributes, LevelAttributes, Telemetry, TelemetryRecord,
};

pub const FLAG_NAMES: [&str; 5] = [
    "spreading_blocker",
    "layer_cake",
    "consecutive_blocker",
    "mega_multicolor_blocker",
    "teleport",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_players: usize,
    pub n_levels: usize,
    pub seed: u64,
    /// Standard deviation of player skill on the logit scale.
    pub skill_sd: f64,
    /// Stationary standard deviation of the skill fluctuation; 0 disables it.
    pub fluctuation_sd: f64,
    /// Levels after which the fluctuation's autocorrelation falls to 1/e.
    pub fluctuation_memory: f64,
    pub consistency_sd: f64,
    /// Weight of the consistency x amplifier interaction.
    pub interaction_strength: f64,
    pub base_logit: f64,
    /// Asymptotic difficulty increase of the ramp.
    pub ramp: f64,
    /// Levels over which the ramp reaches 63% of its height.
    pub ramp_scale: f64,
    pub wave_amplitude: f64,
    pub wave_period: f64,
    pub level_noise_sd: f64,
    pub tutorial_dip: f64,
    pub amplifier_sd: f64,
    pub p_min: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_players: 200,
            n_levels: 300,
            seed: 0,
            skill_sd: 0.7,
            fluctuation_sd: 0.6,
            fluctuation_memory: 60.0,
            consistency_sd: 1.0,
            interaction_strength: 0.5,
            base_logit: 1.7,
            ramp: 2.0,
            ramp_scale: 40.0,
            wave_amplitude: 0.35,
            wave_period: 23.0,
            level_noise_sd: 0.3,
            tutorial_dip: 0.8,
            amplifier_sd: 0.4,
            p_min: 1.0 / 30.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_players == 0 || self.n_levels == 0 {
            return Err(Error::Config(
                "n_players and n_levels must be positive".into(),
            ));
        }
        let scales = [
            ("skill_sd", self.skill_sd),
            ("consistency_sd", self.consistency_sd),
            ("ramp_scale", self.ramp_scale),
            ("wave_period", self.wave_period),
            ("amplifier_sd", self.amplifier_sd),
            ("fluctuation_memory", self.fluctuation_memory),
            ("p_min", self.p_min),
        ];
        for (name, v) in scales {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("fluctuation_sd", self.fluctuation_sd),
            ("interaction_strength", self.interaction_strength),
            ("level_noise_sd", self.level_noise_sd),
            ("wave_amplitude", self.wave_amplitude),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.p_min > 1.0 {
            return Err(Error::Config("p_min must not exceed 1".into()));
        }
        Ok(())
    }
}

pub fn is_tutorial(level: LevelId) -> bool {
    level <= 10 || (level > 20 && level % 10 == 1)
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `E[min(G, cap)]` for `G = 1 + Geometric(p)`, i.e. `(1 - (1-p)^cap) / p`.
pub fn truncated_geometric_mean(p: f64, cap: u32) -> f64 {
    if p >= 1.0 {
        return 1.0;
    }
    (1.0 - (1.0 - p).powi(cap as i32)) / p
}

/// Draws attempts to first completion (not truncated).
pub fn draw_attempts<R: Rng>(p: f64, rng: &mut R) -> u32 {
    if p >= 1.0 {
        return 1;
    }
    let failures = Geometric::new(p).expect("p in (0, 1)").sample(rng);
    failures.saturating_add(1).min(u32::MAX as u64) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerTruth {
    pub skill: f64,
    pub consistency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelTruth {
    pub difficulty: f64,
    pub amplifier: f64,
}

/// Latent ground truth behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub players: Vec<PlayerId>,
    pub levels: Vec<LevelId>,
    pub player_truth: Vec<PlayerTruth>,
    pub level_truth: Vec<LevelTruth>,
    /// Row-major `players x levels` skill fluctuations `z_ul`.
    pub skill_offset: Vec<f64>,
    /// Row-major `players x levels` success probabilities.
    pub p: Vec<f64>,
    player_pos: HashMap<PlayerId, usize>,
    level_pos: HashMap<LevelId, usize>,
}

impl SynthTruth {
    fn new(
        players: Vec<PlayerId>,
        levels: Vec<LevelId>,
        player_truth: Vec<PlayerTruth>,
        level_truth: Vec<LevelTruth>,
        skill_offset: Vec<f64>,
        p: Vec<f64>,
    ) -> Self {
        let player_pos = players
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        let level_pos = levels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        SynthTruth {
            players,
            levels,
            player_truth,
            level_truth,
            skill_offset,
            p,
            player_pos,
            level_pos,
        }
    }

    pub fn success_probability(&self, player: &str, level: LevelId) -> Option<f64> {
        let u = *self.player_pos.get(player)?;
        let l = *self.level_pos.get(&level)?;
        Some(self.p[u * self.levels.len() + l])
    }

    pub fn player(&self, player: &str) -> Option<PlayerTruth> {
        self.player_pos.get(player).map(|&u| self.player_truth[u])
    }

    pub fn level(&self, level: LevelId) -> Option<LevelTruth> {
        self.level_pos.get(&level).map(|&l| self.level_truth[l])
    }

    /// Bayes-optimal expected attempts under squared loss.
    pub fn expected_attempts(&self, player: &str, level: LevelId) -> Option<f64> {
        self.success_probability(player, level)
            .map(|p| truncated_geometric_mean(p, ATTEMPT_CAP))
    }

    pub fn skills(&self) -> BTreeMap<PlayerId, f64> {
        self.players
            .iter()
            .zip(&self.player_truth)
            .map(|(p, t)| (p.clone(), t.skill))
            .collect()
    }

    pub fn difficulties(&self) -> BTreeMap<LevelId, f64> {
        self.levels
            .iter()
            .zip(&self.level_truth)
            .map(|(l, t)| (*l, t.difficulty))
            .collect()
    }

    /// CSV with one row per (player, level): truth values joined with `p`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (u, player) in self.players.iter().enumerate() {
            let pt = self.player_truth[u];
            for (l, level) in self.levels.iter().enumerate() {
                let lt = self.level_truth[l];
                w.serialize(TruthRow {
                    player_id: player.clone(),
                    level_id: *level,
                    skill: pt.skill,
                    consistency: pt.consistency,
                    skill_offset: self.skill_offset[u * self.levels.len() + l],
                    difficulty: lt.difficulty,
                    amplifier: lt.amplifier,
                    p: self.p[u * self.levels.len() + l],
                })?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    player_id: PlayerId,
    level_id: LevelId,
    skill: f64,
    consistency: f64,
    skill_offset: f64,
    difficulty: f64,
    amplifier: f64,
    p: f64,
}

pub fn read_truth<R: Read>(reader: R) -> Result<SynthTruth> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut players: BTreeMap<PlayerId, PlayerTruth> = BTreeMap::new();
    let mut levels: BTreeMap<LevelId, LevelTruth> = BTreeMap::new();
    let mut ps: HashMap<(PlayerId, LevelId), (f64, f64)> = HashMap::new();
    for row in rdr.deserialize::<TruthRow>() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        players.entry(row.player_id.clone()).or_insert(PlayerTruth {
            skill: row.skill,
            consistency: row.consistency,
        });
        levels.entry(row.level_id).or_insert(LevelTruth {
            difficulty: row.difficulty,
            amplifier: row.amplifier,
        });
        ps.insert((row.player_id, row.level_id), (row.skill_offset, row.p));
    }
    let mut offsets = Vec::with_capacity(players.len() * levels.len());
    let mut p = Vec::with_capacity(players.len() * levels.len());
    for player in players.keys() {
        for level in levels.keys() {
            let (z, prob) = *ps.get(&(player.clone(), *level)).ok_or_else(|| {
                Error::Validation(format!("truth missing player {player} level {level}"))
            })?;
            offsets.push(z);
            p.push(prob);
        }
    }
    Ok(SynthTruth::new(
        players.keys().cloned().collect(),
        levels.keys().copied().collect(),
        players.into_values().collect(),
        levels.into_values().collect(),
        offsets,
        p,
    ))
}

pub fn load_truth(path: &Path) -> Result<SynthTruth> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_truth(std::io::BufReader::new(f))
}

/// Everything [`generate`] produces.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Untruncated draws, as written to `interactions.csv`.
    pub raw_records: Vec<InteractionRecord>,
    pub truth: SynthTruth,
    pub levels: Vec<LevelAttributes>,
    pub telemetry: Telemetry,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson<R: Rng>(rng: &mut R, lambda: f64) -> f64 {
    Poisson::new(lambda.max(1e-9))
        .expect("positive rate")
        .sample(rng)
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let c = config;
    let width = c.n_players.to_string().len().max(4);
    let players: Vec<PlayerId> = (0..c.n_players).map(|i| format!("p{i:0width$}")).collect();
    let levels: Vec<LevelId> = (1..=c.n_levels as LevelId).collect();

    // levels: stream 0
    let mut rng = stream_rng(c.seed, 0);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut level_truth = Vec::with_capacity(c.n_levels);
    let mut level_attrs = Vec::with_capacity(c.n_levels);
    for &l in &levels {
        let x = l as f64;
        let mut d = c.ramp * (1.0 - (-x / c.ramp_scale).exp())
            + c.wave_amplitude * (2.0 * std::f64::consts::PI * x / c.wave_period).sin()
            + c.level_noise_sd * noise.sample(&mut rng);
        let mut amp = (c.amplifier_sd * noise.sample(&mut rng)).exp();
        if is_tutorial(l) {
            d -= c.tutorial_dip;
            amp *= 0.2;
        }
        level_truth.push(LevelTruth {
            difficulty: d,
            amplifier: amp,
        });

        let colors = (3.0 + (d + 0.5) * 1.2 + 0.7 * noise.sample(&mut rng))
            .round()
            .clamp(3.0, 6.0) as u32;
        let shape = Gamma::new(2.0 + 2.0 * (1.0 - d).max(0.0), 1.0).expect("positive shape");
        let weights: Vec<f64> = (0..colors).map(|_| shape.sample(&mut rng)).collect();
        let entropy = color_entropy(&weights)?;
        let flag_p = (0.05 + 0.2 * d.max(0.0)).min(0.6);
        let flags = FLAG_NAMES
            .iter()
            .map(|f| {
                (
                    f.to_string(),
                    u8::from(!is_tutorial(l) && rng.random::<f64>() < flag_p),
                )
            })
            .collect();
        level_attrs.push(LevelAttributes {
            level_id: l,
            avg_attempts_train: 0.0,
            color_entropy: entropy,
            color_count: colors,
            flags,
        });
    }

    // players: one stream each
    type PlayerRows = (
        PlayerTruth,
        Vec<f64>,
        Vec<f64>,
        Vec<InteractionRecord>,
        Vec<TelemetryRecord>,
    );
    let per_player: Vec<PlayerRows> = players
        .par_iter()
        .enumerate()
        .map(|(u, player)| {
            let mut rng = stream_rng(c.seed, u as u64 + 1);
            let z = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(rand_distr::StandardNormal) };
            let pt = PlayerTruth {
                skill: c.skill_sd * z(&mut rng),
                consistency: c.consistency_sd * z(&mut rng),
            };
            let phi = (-1.0 / c.fluctuation_memory).exp();
            let innovation = c.fluctuation_sd * (1.0 - phi * phi).sqrt();
            let mut walk = c.fluctuation_sd * z(&mut rng);
            let mut offsets = Vec::with_capacity(levels.len());
            let mut ps = Vec::with_capacity(levels.len());
            let mut recs = Vec::with_capacity(levels.len());
            let mut tele = Vec::with_capacity(levels.len());
            for (li, &l) in levels.iter().enumerate() {
                let lt = level_truth[li];
                if li > 0 {
                    walk = phi * walk + innovation * z(&mut rng);
                }
                offsets.push(walk);
                let skill = pt.skill + walk;
                let logit = c.base_logit - lt.difficulty
                    + skill
                    + c.interaction_strength * pt.consistency * lt.amplifier;
                let p = logistic(logit).clamp(c.p_min, 1.0);
                let attempts = draw_attempts(p, &mut rng);
                ps.push(p);
                recs.push(InteractionRecord::new(player.clone(), l, attempts));

                let gap = lt.difficulty - skill;
                let a = attempts as f64;
                tele.push(TelemetryRecord {
                    player_id: player.clone(),
                    level_id: l,
                    moves_used_ratio: (0.6 + 0.12 * gap + 0.08 * z(&mut rng)).clamp(0.05, 1.0),
                    pregame_boosters: poisson(&mut rng, 0.15 * (0.6 * gap).exp() * a.sqrt()),
                    ingame_boosters: poisson(&mut rng, 0.1 * (0.7 * gap).exp() * a.sqrt()),
                    powerpieces_total: poisson(&mut rng, 3.0 * (0.25 * skill).exp()),
                    powerpiece_combos: poisson(&mut rng, 0.8 * (0.4 * skill).exp()),
                    rockets_solo: poisson(&mut rng, 1.5),
                    rocket_bomb: poisson(&mut rng, 0.3 * (0.3 * skill).exp()),
                    rocket_magic: poisson(&mut rng, 0.2 * (0.3 * skill).exp()),
                    bomb_magic: poisson(&mut rng, 0.15 * (0.3 * skill).exp()),
                });
            }
            (pt, offsets, ps, recs, tele)
        })
        .collect();

    let mut player_truth = Vec::with_capacity(c.n_players);
    let mut skill_offset = Vec::with_capacity(c.n_players * c.n_levels);
    let mut p = Vec::with_capacity(c.n_players * c.n_levels);
    let mut records = Vec::with_capacity(c.n_players * c.n_levels);
    let mut telemetry = Vec::with_capacity(c.n_players * c.n_levels);
    let mut level_sums = vec![0.0; c.n_levels];
    for (pt, offsets, ps, recs, tele) in per_player {
        player_truth.push(pt);
        skill_offset.extend(offsets);
        p.extend(ps);
        for (li, r) in recs.iter().enumerate() {
            level_sums[li] += r.attempts.min(ATTEMPT_CAP) as f64;
        }
        records.extend(recs);
        telemetry.extend(tele);
    }
    for (attr, sum) in level_attrs.iter_mut().zip(&level_sums) {
        attr.avg_attempts_train = sum / c.n_players as f64;
    }

    Ok(SynthOutput {
        dataset: Dataset::new(records.clone())?,
        raw_records: records,
        truth: SynthTruth::new(players, levels, player_truth, level_truth, skill_offset, p),
        levels: level_attrs,
        telemetry: Telemetry::new(telemetry)?,
    })
}

/// File names written by [`SynthOutput::write_to`].
pub const OUTPUT_FILES: [&str; 4] = [
    "interactions.csv",
    "levels.csv",
    "telemetry.csv",
    "truth.csv",
];

impl SynthOutput {
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths: Vec<PathBuf> = OUTPUT_FILES.iter().map(|f| dir.join(f)).collect();
        let open = |p: &Path| -> Result<BufWriter<File>> {
            Ok(BufWriter::new(
                File::create(p).map_err(|e| Error::io(p, e))?,
            ))
        };
        let mut w = csv::Writer::from_writer(open(&paths[0])?);
        for r in &self.raw_records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&paths[0], e))?;
        drop(w);
        write_level_attributes(&self.levels, open(&paths[1])?)?;
        self.telemetry.write_csv(open(&paths[2])?)?;
        self.truth.write_csv(open(&paths[3])?)?;
        Ok(paths)
    }
}

/// Error of the Bayes-optimal predictor on the test side of a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

pub fn oracle_predictions<'a>(
    truth: &SynthTruth,
    records: impl Iterator<Item = &'a InteractionRecord>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pred = Vec::new();
    let mut obs = Vec::new();
    for r in records {
        let e = truth
            .expected_attempts(&r.player_id, r.level_id)
            .ok_or_else(|| {
                Error::Contract(format!(
                    "no ground truth for player {} level {}",
                    r.player_id, r.level_id
                ))
            })?;
        pred.push(e);
        obs.push(r.attempts as f64);
    }
    Ok((pred, obs))
}

pub fn oracle_metrics(truth: &SynthTruth, split: &Split) -> Result<OracleReport> {
    let (pred, obs) = oracle_predictions(truth, split.test.records().iter())?;
    Ok(OracleReport {
        mae: mae(&pred, &obs)?,
        rmse: rmse(&pred, &obs)?,
        n: pred.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{fit_naive, predict_naive};
    use crate::dataset::{split_players, SplitSpec};

    #[test]
    fn certain_success_is_one_attempt() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| draw_attempts(1.0, &mut rng) == 1));
        assert_eq!(truncated_geometric_mean(1.0, 30), 1.0);
    }

    #[test]
    fn geometric_mean_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| draw_attempts(0.5, &mut rng) as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "mean = {mean}");
    }

    #[test]
    fn truncated_mean_matches_summation() {
        for p in [0.5, 0.1, 1.0 / 30.0, 0.9] {
            // P(k) = p(1-p)^(k-1) for k < 30, remaining mass at 30
            let mut e = 0.0;
            for k in 1..30u32 {
                e += k as f64 * p * (1.0 - p).powi(k as i32 - 1);
            }
            e += 30.0 * (1.0 - p).powi(29);
            assert!((truncated_geometric_mean(p, 30) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn higher_skill_fewer_attempts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let mean_at = |logit: f64, rng: &mut ChaCha8Rng| {
            let p = logistic(logit);
            (0..n).map(|_| draw_attempts(p, rng) as f64).sum::<f64>() / n as f64
        };
        let weak = mean_at(-0.5, &mut rng);
        let strong = mean_at(0.5, &mut rng);
        assert!(strong < weak);
    }

    #[test]
    fn tutorial_levels() {
        assert!(is_tutorial(1) && is_tutorial(10) && is_tutorial(21) && is_tutorial(151));
        assert!(!is_tutorial(11) && !is_tutorial(20) && !is_tutorial(22));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            n_players: 20,
            n_levels: 40,
            seed: 5,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.levels, b.levels);
        assert_eq!(a.telemetry.rows(), b.telemetry.rows());
        let c = generate(&SynthConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn outputs_respect_invariants() {
        let cfg = SynthConfig {
            n_players: 30,
            n_levels: 60,
            seed: 8,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        assert_eq!(out.dataset.len(), 30 * 60);
        assert!(out.truth.p.iter().all(|p| *p >= cfg.p_min && *p <= 1.0));
        for l in &out.levels {
            assert!(l.color_entropy <= (l.color_count as f64).ln() + 1e-12);
        }
        assert_eq!(out.telemetry.len(), out.dataset.len());
    }

    #[test]
    fn distribution_shape() {
        let out = generate(&SynthConfig {
            seed: 9,
            ..SynthConfig::default()
        })
        .unwrap();
        let frac = out.dataset.truncated_count() as f64 / out.dataset.len() as f64;
        assert!(frac < 0.02, "truncated fraction {frac}");

        let mut hist = [0usize; 31];
        let mut sums = vec![0.0; 300];
        for r in out.dataset.records() {
            if r.level_id > 150 {
                hist[r.attempts as usize] += 1;
            }
            sums[r.level_id as usize - 1] += r.attempts as f64;
        }
        let mode = (1..=30).max_by_key(|&a| hist[a]).unwrap();
        assert_eq!(mode, 1);
        assert!(hist[11..].iter().sum::<usize>() > 0);

        let means: Vec<f64> = sums.iter().map(|s| s / 200.0).collect();
        let smooth = crate::eval::rolling_mean(&means, 12);
        let early = smooth[20..60].iter().sum::<f64>() / 40.0;
        let late = smooth[260..300].iter().sum::<f64>() / 40.0;
        assert!(late > early, "early {early} late {late}");
    }

    #[test]
    fn raw_attempts_written_untruncated() {
        let cfg = SynthConfig {
            n_players: 30,
            n_levels: 40,
            seed: 2,
            base_logit: -2.5,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        assert!(out.raw_records.iter().any(|r| r.attempts > 30));
        let dir = tempfile::tempdir().unwrap();
        out.write_to(dir.path()).unwrap();
        let loaded =
            crate::dataset::load_interactions(&dir.path().join("interactions.csv")).unwrap();
        assert_eq!(loaded.records(), out.dataset.records());
        assert!(loaded.truncated_count() > 0);
    }

    #[test]
    fn truth_csv_round_trip() {
        let cfg = SynthConfig {
            n_players: 5,
            n_levels: 7,
            seed: 1,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let mut buf = Vec::new();
        out.truth.write_csv(&mut buf).unwrap();
        assert_eq!(read_truth(buf.as_slice()).unwrap(), out.truth);
    }

    #[test]
    fn oracle_floor_below_baseline() {
        let cfg = SynthConfig {
            n_players: 100,
            n_levels: 200,
            seed: 3,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let split = split_players(
            &out.dataset,
            &SplitSpec {
                test_fraction: 0.1,
                observed_levels: 50,
                ..SplitSpec::default()
            },
        )
        .unwrap();
        let oracle = oracle_metrics(&out.truth, &split).unwrap();
        let train_players: Vec<_> = split
            .train
            .records()
            .iter()
            .filter(|r| !split.test_players.contains(&r.player_id))
            .cloned()
            .collect();
        let naive = fit_naive(&Dataset::new(train_players).unwrap());
        let pred: Vec<f64> = split
            .test
            .records()
            .iter()
            .map(|r| predict_naive(&naive, r.level_id))
            .collect();
        let obs: Vec<f64> = split
            .test
            .records()
            .iter()
            .map(|r| r.attempts as f64)
            .collect();
        assert!(oracle.rmse <= rmse(&pred, &obs).unwrap());
    }

    #[test]
    fn oracle_zero_when_outcomes_certain() {
        let cfg = SynthConfig {
            n_players: 10,
            n_levels: 200,
            seed: 4,
            base_logit: 60.0,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        assert!(out.truth.p.iter().all(|p| *p == 1.0));
        let split = split_players(
            &out.dataset,
            &SplitSpec {
                test_fraction: 0.2,
                observed_levels: 10,
                ..SplitSpec::default()
            },
        )
        .unwrap();
        let report = oracle_metrics(&out.truth, &split).unwrap();
        assert_eq!(report.mae, 0.0);
    }

    #[test]
    fn invalid_config() {
        let cfg = SynthConfig {
            n_players: 0,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig {
            skill_sd: -1.0,
            ..SynthConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }
}
