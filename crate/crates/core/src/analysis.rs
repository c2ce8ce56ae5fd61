//! Interpretation of a trained FM: per-entity factor tables joined with
//! attempt statistics, rank correlations and parameter histograms.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LevelId};
use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::fm::FmModel;
use crate::synth::SynthTruth;

/// Fractional ranks starting at 1; ties share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "correlation inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Contract(
            "correlation needs at least two pairs".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "an input has zero variance".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "correlation inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Player,
    Level,
}

/// Attempt statistics of one entity over the training records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityStats {
    pub count: usize,
    pub mean_attempts: f64,
    /// Population variance (divides by `count`).
    pub attempts_variance: f64,
    /// `variance / mean`.
    pub normalized_variance: f64,
    /// `variance / mean^2`.
    pub normalized_variance_sq: f64,
}

impl EntityStats {
    fn from_attempts(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        EntityStats {
            count: values.len(),
            mean_attempts: mean,
            attempts_variance: var,
            normalized_variance: var / mean,
            normalized_variance_sq: var / (mean * mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub id: String,
    pub w: f64,
    pub v: Vec<f64>,
    /// `None` when the entity has no training records.
    pub stats: Option<EntityStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTable {
    pub kind: EntityKind,
    pub k: usize,
    pub rows: Vec<FactorRow>,
}

impl FactorTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn w(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.w).collect()
    }

    pub fn factor(&self, f: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.v[f]).collect()
    }

    fn flip(&mut self, f: usize) {
        for r in &mut self.rows {
            r.v[f] = -r.v[f];
        }
    }
}

/// Splits the model's parameters by entity and joins training statistics.
pub fn build_factor_tables(
    model: &FmModel,
    schema: &FeatureSchema,
    train: &Dataset,
) -> Result<(FactorTable, FactorTable)> {
    if model.schema_width != schema.width() {
        return Err(Error::Contract(format!(
            "model width {} differs from schema width {}",
            model.schema_width,
            schema.width()
        )));
    }
    let mut by_player: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut by_level: BTreeMap<LevelId, Vec<f64>> = BTreeMap::new();
    for r in train.records() {
        by_player
            .entry(&r.player_id)
            .or_default()
            .push(r.attempts as f64);
        by_level
            .entry(r.level_id)
            .or_default()
            .push(r.attempts as f64);
    }
    let row = |col: usize, id: String, attempts: Option<&Vec<f64>>| FactorRow {
        id,
        w: model.w[col],
        v: model.factors(col).to_vec(),
        stats: attempts.map(|a| EntityStats::from_attempts(a)),
    };
    let players = schema
        .players
        .iter()
        .enumerate()
        .map(|(i, p)| {
            row(
                schema.player_block().start + i,
                p.clone(),
                by_player.get(p.as_str()),
            )
        })
        .collect();
    let levels = schema
        .levels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            row(
                schema.level_block().start + i,
                l.to_string(),
                by_level.get(l),
            )
        })
        .collect();
    Ok((
        FactorTable {
            kind: EntityKind::Player,
            k: model.k,
            rows: players,
        },
        FactorTable {
            kind: EntityKind::Level,
            k: model.k,
            rows: levels,
        },
    ))
}

/// Flips factor columns so that every level factor has a non-negative rank
/// correlation with average attempts. Flipping a column on both sides leaves
/// every prediction unchanged. Returns which columns were flipped.
pub fn canonicalize_signs(players: &mut FactorTable, levels: &mut FactorTable) -> Vec<bool> {
    let (idx, attempts): (Vec<usize>, Vec<f64>) = levels
        .rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.stats.map(|s| (i, s.mean_attempts)))
        .unzip();
    (0..levels.k)
        .map(|f| {
            let vf: Vec<f64> = idx.iter().map(|&i| levels.rows[i].v[f]).collect();
            let flip = spearman(&vf, &attempts).is_ok_and(|rho| rho < 0.0);
            if flip {
                levels.flip(f);
                players.flip(f);
            }
            flip
        })
        .collect()
}

/// Moves the mean of each factor column into the biases.
///
/// With exactly one active player and one active level per row,
/// `v_u . v_l = (m_u + d_u) . (m_l + d_l)`, so setting
/// `w_u += m_l . d_u`, `w_l += m_u . d_l + m_u . m_l` and `v = d` on both
/// sides leaves every prediction unchanged. Afterwards the biases carry each
/// entity's average effect and the factors only the interaction. Only valid
/// for schemas without side features.
pub fn center_factors(players: &mut FactorTable, levels: &mut FactorTable) {
    let k = players.k.min(levels.k);
    let mean = |t: &FactorTable, f: usize| {
        t.rows.iter().map(|r| r.v[f]).sum::<f64>() / t.rows.len().max(1) as f64
    };
    let mp: Vec<f64> = (0..k).map(|f| mean(players, f)).collect();
    let ml: Vec<f64> = (0..k).map(|f| mean(levels, f)).collect();
    let constant: f64 = mp.iter().zip(&ml).map(|(a, b)| a * b).sum();
    for r in &mut players.rows {
        for f in 0..k {
            r.v[f] -= mp[f];
            r.w += ml[f] * r.v[f];
        }
    }
    for r in &mut levels.rows {
        r.w += constant;
        for f in 0..k {
            r.v[f] -= ml[f];
            r.w += mp[f] * r.v[f];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub name: String,
    pub rho: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pairs: Vec<Correlation>,
}

impl CorrelationReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.pairs.iter().find(|c| c.name == name).map(|c| c.rho)
    }

    fn push(&mut self, name: &str, a: &[f64], b: &[f64]) -> Result<()> {
        let rho = spearman(a, b)?;
        self.pairs.push(Correlation {
            name: name.to_string(),
            rho,
            n: a.len(),
        });
        Ok(())
    }
}

fn with_stats<'a>(
    table: &'a FactorTable,
) -> impl Iterator<Item = (&'a FactorRow, EntityStats)> + 'a {
    table.rows.iter().filter_map(|r| r.stats.map(|s| (r, s)))
}

/// Rank correlations between learned parameters and data statistics, and
/// against ground truth when it is available.
///
/// The player skill proxy is `-w`: a larger player bias means more attempts,
/// so it is negated to point in the direction of skill.
pub fn interpretation_report(
    players: &FactorTable,
    levels: &FactorTable,
    truth: Option<&SynthTruth>,
) -> Result<CorrelationReport> {
    let mut rep = CorrelationReport::default();
    let lv: Vec<(&FactorRow, EntityStats)> = with_stats(levels).collect();
    let pl: Vec<(&FactorRow, EntityStats)> = with_stats(players).collect();
    let level_mean: Vec<f64> = lv.iter().map(|(_, s)| s.mean_attempts).collect();
    let player_mean: Vec<f64> = pl.iter().map(|(_, s)| s.mean_attempts).collect();

    rep.push(
        "level_w~avg_attempts",
        &lv.iter().map(|(r, _)| r.w).collect::<Vec<_>>(),
        &level_mean,
    )?;
    rep.push(
        "player_w~mean_attempts",
        &pl.iter().map(|(r, _)| r.w).collect::<Vec<_>>(),
        &player_mean,
    )?;
    if levels.k >= 1 {
        let lv1: Vec<f64> = lv.iter().map(|(r, _)| r.v[0]).collect();
        rep.push("level_v1~avg_attempts", &lv1, &level_mean)?;
        rep.push(
            "level_v1~normalized_variance",
            &lv1,
            &lv.iter()
                .map(|(_, s)| s.normalized_variance)
                .collect::<Vec<_>>(),
        )?;
        rep.push(
            "level_v1~normalized_variance_sq",
            &lv1,
            &lv.iter()
                .map(|(_, s)| s.normalized_variance_sq)
                .collect::<Vec<_>>(),
        )?;
        rep.push(
            "player_v1~mean_attempts",
            &pl.iter().map(|(r, _)| r.v[0]).collect::<Vec<_>>(),
            &player_mean,
        )?;
    }
    if levels.k >= 2 {
        let number: Vec<f64> = levels
            .rows
            .iter()
            .map(|r| r.id.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Contract(format!("level id is not a number: {e}")))?;
        rep.push("level_v2~level_number", &levels.factor(1), &number)?;
    }

    if let Some(truth) = truth {
        let mut w = Vec::new();
        let mut d = Vec::new();
        for r in &levels.rows {
            let id: LevelId =
                r.id.parse()
                    .map_err(|e| Error::Contract(format!("level id {:?}: {e}", r.id)))?;
            let t = truth
                .level(id)
                .ok_or_else(|| Error::Contract(format!("no ground truth for level {id}")))?;
            w.push(r.w);
            d.push(t.difficulty);
        }
        rep.push("level_w~true_difficulty", &w, &d)?;

        let mut proxy = Vec::new();
        let mut v1 = Vec::new();
        let mut skill = Vec::new();
        for r in &players.rows {
            let t = truth
                .player(&r.id)
                .ok_or_else(|| Error::Contract(format!("no ground truth for player {}", r.id)))?;
            proxy.push(-r.w);
            v1.push(r.v.first().copied().unwrap_or(0.0));
            skill.push(t.skill);
        }
        rep.push("player_skill_proxy~true_skill", &proxy, &skill)?;
        if players.k >= 1 {
            rep.push("player_v1~true_skill", &v1, &skill)?;
        }
    }
    Ok(rep)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

const MAX_BINS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Freedman-Diaconis histogram: bin width `2 IQR n^(-1/3)` spanning
/// `[min, max]`, last bin closed. Falls back to a single bin when the IQR
/// is zero.
pub fn histogram(values: &[f64]) -> Result<Vec<Bin>> {
    if values.is_empty() {
        return Err(Error::Contract("cannot bin an empty series".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(
            "histogram input contains non-finite values".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    let bins = if width > 0.0 && max > min {
        (((max - min) / width).ceil() as usize).clamp(1, MAX_BINS)
    } else {
        1
    };
    let step = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &sorted {
        let b = if step > 0.0 {
            (((v - min) / step) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| Bin {
            lo: min + step * i as f64,
            hi: if i + 1 == bins {
                max
            } else {
                min + step * (i + 1) as f64
            },
            count,
        })
        .collect())
}

/// Histograms of `w` and every factor column, per entity kind.
pub fn parameter_histograms(
    players: &FactorTable,
    levels: &FactorTable,
) -> Result<Vec<(String, Vec<Bin>)>> {
    let mut out = Vec::new();
    for (prefix, table) in [("player", players), ("level", levels)] {
        if table.is_empty() {
            continue;
        }
        out.push((format!("{prefix}_w"), histogram(&table.w())?));
        for f in 0..table.k {
            out.push((format!("{prefix}_v{}", f + 1), histogram(&table.factor(f))?));
        }
    }
    Ok(out)
}

fn stat_cells(s: Option<EntityStats>, level: bool) -> Vec<String> {
    match s {
        Some(s) => {
            let mut v = vec![
                s.count.to_string(),
                s.mean_attempts.to_string(),
                s.attempts_variance.to_string(),
            ];
            if level {
                v.push(s.normalized_variance.to_string());
                v.push(s.normalized_variance_sq.to_string());
            }
            v
        }
        None => vec![String::new(); if level { 5 } else { 3 }],
    }
}

pub fn write_factor_table<W: Write>(table: &FactorTable, writer: W) -> Result<()> {
    let level = table.kind == EntityKind::Level;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        if level { "level_id" } else { "player_id" }.to_string(),
        "w".into(),
    ];
    header.extend((1..=table.k).map(|f| format!("v{f}")));
    if level {
        header.extend(
            [
                "count",
                "avg_attempts",
                "attempts_variance",
                "normalized_variance",
                "normalized_variance_sq",
            ]
            .map(String::from),
        );
    } else {
        header.extend(["count", "mean_attempts", "attempts_variance"].map(String::from));
    }
    w.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![r.id.clone(), r.w.to_string()];
        rec.extend(r.v.iter().map(|v| v.to_string()));
        rec.extend(stat_cells(r.stats, level));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// CSV `series,bin_lo,bin_hi,count`.
pub fn write_histograms<W: Write>(hists: &[(String, Vec<Bin>)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series", "bin_lo", "bin_hi", "count"])?;
    for (name, bins) in hists {
        for b in bins {
            w.write_record([
                name.clone(),
                b.lo.to_string(),
                b.hi.to_string(),
                b.count.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// CSV `pair,rho,n`.
pub fn write_correlations<W: Write>(report: &CorrelationReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["pair", "rho", "n"])?;
    for c in &report.pairs {
        w.write_record([c.name.clone(), c.rho.to_string(), c.n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Everything the analysis step writes.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub players: FactorTable,
    pub levels: FactorTable,
    /// Whether [`center_factors`] was applied (one-hot schemas only).
    pub centered: bool,
    pub flipped: Vec<bool>,
    pub histograms: Vec<(String, Vec<Bin>)>,
    pub correlations: CorrelationReport,
}

/// Tables, canonicalization, histograms and correlations in one pass.
///
/// Factors are centered for one-hot schemas and then sign-canonicalized; the
/// raw parameters stay available in the model file.
pub fn analyze(
    model: &FmModel,
    schema: &FeatureSchema,
    train: &Dataset,
    truth: Option<&SynthTruth>,
) -> Result<Analysis> {
    let (mut players, mut levels) = build_factor_tables(model, schema, train)?;
    let centered = !schema.augmented;
    if centered {
        center_factors(&mut players, &mut levels);
    }
    let flipped = canonicalize_signs(&mut players, &mut levels);
    let histograms = parameter_histograms(&players, &levels)?;
    let correlations = interpretation_report(&players, &levels, truth)?;
    Ok(Analysis {
        players,
        levels,
        centered,
        flipped,
        histograms,
        correlations,
    })
}

pub const OUTPUT_FILES: [&str; 4] = [
    "factors_levels.csv",
    "factors_players.csv",
    "param_histograms.csv",
    "correlations.csv",
];

impl Analysis {
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths: Vec<PathBuf> = OUTPUT_FILES.iter().map(|f| dir.join(f)).collect();
        let open = |p: &Path| -> Result<BufWriter<File>> {
            Ok(BufWriter::new(
                File::create(p).map_err(|e| Error::io(p, e))?,
            ))
        };
        write_factor_table(&self.levels, open(&paths[0])?)?;
        write_factor_table(&self.players, open(&paths[1])?)?;
        write_histograms(&self.histograms, open(&paths[2])?)?;
        write_correlations(&self.correlations, open(&paths[3])?)?;
        Ok(paths)
    }
}
