//! Sparse design rows for the factorization machine and dense feature rows for
//! the forest.
//!
//! Column layout of a [`FeatureSchema`]:
//!
//! ```text
//! [0, P)                  player one-hot
//! [P, P+L)                level one-hot
//! [P+L, P+L+PF)           player aggregates   (augmented schemas only)
//! [P+L+PF, P+L+PF+LF)     level attributes    (augmented schemas only)
//! ```
//!
//! Player aggregates are means over the first `observed_levels` levels of each
//! player, for training and test players alike. Level averages use training
//! players only.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{InteractionRecord, LevelId, PlayerId, Split};
use crate::error::{Error, Result};

/// Shannon entropy (natural log) of a set of spawning weights.
pub fn color_entropy(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Domain(
            "color weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return Err(Error::Domain("color weights are empty or all zero".into()));
    }
    let s = weights
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| {
            let p = w / total;
            -p * p.ln()
        })
        .sum::<f64>();
    Ok(s.max(0.0))
}

// ---------------------------------------------------------------------------
// Level attributes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAttributes {
    pub level_id: LevelId,
    pub avg_attempts_train: f64,
    pub color_entropy: f64,
    pub color_count: u32,
    /// Binary attributes keyed without the `flag_` prefix.
    pub flags: BTreeMap<String, u8>,
}

pub fn read_level_attributes<R: Read>(reader: R) -> Result<Vec<LevelAttributes>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or(Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (c_level, c_avg, c_ent, c_cnt) = (
        col("level_id")?,
        col("avg_attempts_train")?,
        col("color_entropy")?,
        col("color_count")?,
    );
    let flag_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("flag_").map(|n| (i, n.to_string())))
        .collect();

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");
        let parse_err = |what: &str, e: &dyn std::fmt::Display| Error::Parse {
            line,
            message: format!("{what}: {e}"),
        };
        let level_id: LevelId = field(c_level)
            .parse()
            .map_err(|e| parse_err("level_id", &e))?;
        let avg: f64 = field(c_avg)
            .parse()
            .map_err(|e| parse_err("avg_attempts_train", &e))?;
        let ent: f64 = field(c_ent)
            .parse()
            .map_err(|e| parse_err("color_entropy", &e))?;
        let cnt: u32 = field(c_cnt)
            .parse()
            .map_err(|e| parse_err("color_count", &e))?;
        let mut flags = BTreeMap::new();
        for (i, name) in &flag_cols {
            let v: u8 = field(*i).parse().map_err(|e| parse_err(name, &e))?;
            if v > 1 {
                return Err(Error::Validation(format!(
                    "line {line}: flag_{name} must be 0 or 1"
                )));
            }
            flags.insert(name.clone(), v);
        }
        if cnt == 0 || ent < 0.0 || ent > (cnt as f64).ln() + 1e-9 {
            return Err(Error::Validation(format!(
                "line {line}: color_entropy {ent} outside [0, ln({cnt})]"
            )));
        }
        out.push(LevelAttributes {
            level_id,
            avg_attempts_train: avg,
            color_entropy: ent,
            color_count: cnt,
            flags,
        });
    }
    Ok(out)
}

pub fn load_level_attributes(path: &Path) -> Result<Vec<LevelAttributes>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_level_attributes(std::io::BufReader::new(file))
}

pub fn write_level_attributes<W: Write>(levels: &[LevelAttributes], writer: W) -> Result<()> {
    let flag_names: BTreeSet<&String> = levels.iter().flat_map(|l| l.flags.keys()).collect();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "level_id".to_string(),
        "avg_attempts_train".into(),
        "color_entropy".into(),
        "color_count".into(),
    ];
    header.extend(flag_names.iter().map(|n| format!("flag_{n}")));
    w.write_record(&header)?;
    for l in levels {
        let mut rec = vec![
            l.level_id.to_string(),
            format!("{}", l.avg_attempts_train),
            format!("{}", l.color_entropy),
            l.color_count.to_string(),
        ];
        rec.extend(
            flag_names
                .iter()
                .map(|n| l.flags.get(*n).copied().unwrap_or(0).to_string()),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Behavior telemetry
// ---------------------------------------------------------------------------

/// Per-record behavior columns, in schema order.
pub const BEHAVIOR_FIELDS: [&str; 9] = [
    "moves_used_ratio",
    "pregame_boosters",
    "ingame_boosters",
    "powerpieces_total",
    "powerpiece_combos",
    "rockets_solo",
    "rocket_bomb",
    "rocket_magic",
    "bomb_magic",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub player_id: PlayerId,
    pub level_id: LevelId,
    pub moves_used_ratio: f64,
    pub pregame_boosters: f64,
    pub ingame_boosters: f64,
    pub powerpieces_total: f64,
    pub powerpiece_combos: f64,
    pub rockets_solo: f64,
    pub rocket_bomb: f64,
    pub rocket_magic: f64,
    pub bomb_magic: f64,
}

impl TelemetryRecord {
    pub fn values(&self) -> [f64; 9] {
        [
            self.moves_used_ratio,
            self.pregame_boosters,
            self.ingame_boosters,
            self.powerpieces_total,
            self.powerpiece_combos,
            self.rockets_solo,
            self.rocket_bomb,
            self.rocket_magic,
            self.bomb_magic,
        ]
    }
}

/// Behavior telemetry keyed by (player, level).
#[derive(Debug, Clone, Default)]
pub struct Telemetry {
    rows: Vec<TelemetryRecord>,
    index: HashMap<(PlayerId, LevelId), usize>,
}

impl Telemetry {
    pub fn new(mut rows: Vec<TelemetryRecord>) -> Result<Self> {
        rows.sort_by(|a, b| {
            a.player_id
                .cmp(&b.player_id)
                .then(a.level_id.cmp(&b.level_id))
        });
        let mut index = HashMap::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Validation(format!(
                    "telemetry for player {} level {} has negative or non-finite values",
                    r.player_id, r.level_id
                )));
            }
            if index.insert((r.player_id.clone(), r.level_id), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate telemetry for player {} level {}",
                    r.player_id, r.level_id
                )));
            }
        }
        Ok(Telemetry { rows, index })
    }

    pub fn get(&self, player: &str, level: LevelId) -> Option<&TelemetryRecord> {
        self.index
            .get(&(player.to_string(), level))
            .map(|&i| &self.rows[i])
    }

    pub fn rows(&self) -> &[TelemetryRecord] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

pub fn read_telemetry<R: Read>(reader: R) -> Result<Telemetry> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for row in rdr.deserialize::<TelemetryRecord>() {
        rows.push(row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?);
    }
    Telemetry::new(rows)
}

pub fn load_telemetry(path: &Path) -> Result<Telemetry> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_telemetry(std::io::BufReader::new(file))
}

// ---------------------------------------------------------------------------
// Player aggregates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerAggregates {
    pub player_id: PlayerId,
    pub n_observed: usize,
    pub mean_attempts: f64,
    pub mean_moves_used_ratio: f64,
    pub mean_pregame_boosters: f64,
    pub mean_ingame_boosters: f64,
    pub mean_powerpieces_total: f64,
    pub mean_powerpiece_combos: f64,
    pub mean_rockets_solo: f64,
    pub mean_rocket_bomb: f64,
    pub mean_rocket_magic: f64,
    pub mean_bomb_magic: f64,
    /// Set when no telemetry covered any of the records; behavior means are 0.
    pub telemetry_missing: bool,
}

impl PlayerAggregates {
    pub fn behavior(&self) -> [f64; 9] {
        [
            self.mean_moves_used_ratio,
            self.mean_pregame_boosters,
            self.mean_ingame_boosters,
            self.mean_powerpieces_total,
            self.mean_powerpiece_combos,
            self.mean_rockets_solo,
            self.mean_rocket_bomb,
            self.mean_rocket_magic,
            self.mean_bomb_magic,
        ]
    }
}

/// Means over one player's observed records.
pub fn aggregate_player(
    records: &[InteractionRecord],
    telemetry: Option<&Telemetry>,
) -> Result<PlayerAggregates> {
    let first = records
        .first()
        .ok_or_else(|| Error::Contract("cannot aggregate an empty record set".into()))?;
    if let Some(other) = records.iter().find(|r| r.player_id != first.player_id) {
        return Err(Error::Contract(format!(
            "records from multiple players ({} and {})",
            first.player_id, other.player_id
        )));
    }
    let n = records.len();
    let mean_attempts = records.iter().map(|r| r.attempts as f64).sum::<f64>() / n as f64;

    let mut sums = [0.0; 9];
    let mut covered = 0usize;
    if let Some(t) = telemetry {
        for r in records {
            if let Some(row) = t.get(&r.player_id, r.level_id) {
                for (s, v) in sums.iter_mut().zip(row.values()) {
                    *s += v;
                }
                covered += 1;
            }
        }
    }
    let means = if covered > 0 {
        sums.map(|s| s / covered as f64)
    } else {
        [0.0; 9]
    };
    Ok(PlayerAggregates {
        player_id: first.player_id.clone(),
        n_observed: n,
        mean_attempts,
        mean_moves_used_ratio: means[0],
        mean_pregame_boosters: means[1],
        mean_ingame_boosters: means[2],
        mean_powerpieces_total: means[3],
        mean_powerpiece_combos: means[4],
        mean_rockets_solo: means[5],
        mean_rocket_bomb: means[6],
        mean_rocket_magic: means[7],
        mean_bomb_magic: means[8],
        telemetry_missing: covered == 0,
    })
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer {
        mean: 0.0,
        scale: 1.0,
    };

    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
        for x in values {
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let sd = (m2 / n).sqrt();
        Standardizer {
            mean,
            scale: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    /// Binary columns are used raw; real-valued ones are standardized.
    pub binary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub players: Vec<PlayerId>,
    pub levels: Vec<LevelId>,
    pub player_features: Vec<FeatureColumn>,
    pub level_features: Vec<FeatureColumn>,
    /// One entry per player feature followed by one per level feature.
    pub normalization: Vec<Standardizer>,
    pub augmented: bool,
    pub observed_levels: LevelId,
    pub telemetry_available: bool,
}

impl FeatureSchema {
    pub fn player_block(&self) -> std::ops::Range<usize> {
        0..self.players.len()
    }

    pub fn level_block(&self) -> std::ops::Range<usize> {
        let p = self.players.len();
        p..p + self.levels.len()
    }

    pub fn player_feature_block(&self) -> std::ops::Range<usize> {
        let start = self.level_block().end;
        if self.augmented {
            start..start + self.player_features.len()
        } else {
            start..start
        }
    }

    pub fn level_feature_block(&self) -> std::ops::Range<usize> {
        let start = self.player_feature_block().end;
        if self.augmented {
            start..start + self.level_features.len()
        } else {
            start..start
        }
    }

    pub fn width(&self) -> usize {
        self.level_feature_block().end
    }

    pub fn player_column(&self, player: &str) -> Option<usize> {
        self.players
            .binary_search_by(|p| p.as_str().cmp(player))
            .ok()
    }

    pub fn level_column(&self, level: LevelId) -> Option<usize> {
        self.levels
            .binary_search(&level)
            .ok()
            .map(|i| i + self.players.len())
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.players.iter().map(|p| format!("player={p}")).collect();
        names.extend(self.levels.iter().map(|l| format!("level={l}")));
        if self.augmented {
            names.extend(
                self.player_features
                    .iter()
                    .map(|c| format!("player_{}", c.name)),
            );
            names.extend(
                self.level_features
                    .iter()
                    .map(|c| format!("level_{}", c.name)),
            );
        }
        names
    }

    /// Hash of the full column layout.
    pub fn fingerprint(&self) -> String {
        hash_lines(self.column_names().iter())
    }

    /// Hash of the player and level one-hot blocks only.
    pub fn identity_fingerprint(&self) -> String {
        hash_lines(self.column_names()[..self.level_block().end].iter())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn hash_lines<'a>(lines: impl Iterator<Item = &'a String>) -> String {
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Names of the level attribute columns, in schema order.
fn level_feature_columns(
    flag_names: &BTreeSet<String>,
    have_attributes: bool,
) -> Vec<FeatureColumn> {
    let mut cols = vec![FeatureColumn {
        name: "avg_attempts_train".into(),
        binary: false,
    }];
    if have_attributes {
        cols.push(FeatureColumn {
            name: "color_entropy".into(),
            binary: false,
        });
        cols.push(FeatureColumn {
            name: "color_count".into(),
            binary: false,
        });
        cols.extend(flag_names.iter().map(|f| FeatureColumn {
            name: format!("flag_{f}"),
            binary: true,
        }));
    }
    cols
}

/// Schema plus the raw per-entity feature values it encodes.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub schema: FeatureSchema,
    player_values: HashMap<PlayerId, Vec<f64>>,
    level_values: HashMap<LevelId, Vec<f64>>,
    aggregates: BTreeMap<PlayerId, PlayerAggregates>,
}

impl FeatureSet {
    /// Builds the schema from the training side of `split`.
    pub fn build(
        split: &Split,
        level_attributes: Option<&[LevelAttributes]>,
        telemetry: Option<&Telemetry>,
        augment: bool,
    ) -> Result<Self> {
        let train = &split.train;
        if train.is_empty() {
            return Err(Error::Protocol("training side of split is empty".into()));
        }
        let observed = split.spec.observed_levels;
        let players: Vec<PlayerId> = train.player_index().keys().cloned().collect();
        let levels: Vec<LevelId> = train.level_index().keys().copied().collect();

        // player aggregates over the first `observed` levels
        let mut aggregates = BTreeMap::new();
        for (player, records) in train.by_player() {
            let upto = records.partition_point(|r| r.level_id <= observed);
            let window = if upto == 0 { records } else { &records[..upto] };
            aggregates.insert(player.to_string(), aggregate_player(window, telemetry)?);
        }
        let telemetry_available = telemetry.is_some();
        let mut player_features = vec![FeatureColumn {
            name: "mean_attempts".into(),
            binary: false,
        }];
        if telemetry_available {
            player_features.extend(BEHAVIOR_FIELDS.iter().map(|f| FeatureColumn {
                name: format!("mean_{f}"),
                binary: false,
            }));
        }
        let player_values: HashMap<PlayerId, Vec<f64>> = aggregates
            .iter()
            .map(|(p, a)| {
                let mut v = vec![a.mean_attempts];
                if telemetry_available {
                    v.extend(a.behavior());
                }
                (p.clone(), v)
            })
            .collect();

        // level averages from training players only
        let mut sums: BTreeMap<LevelId, (f64, usize)> = BTreeMap::new();
        let (mut total, mut count) = (0.0, 0usize);
        for r in train.records() {
            if split.test_players.contains(&r.player_id) {
                continue;
            }
            let e = sums.entry(r.level_id).or_default();
            e.0 += r.attempts as f64;
            e.1 += 1;
            total += r.attempts as f64;
            count += 1;
        }
        let fallback = if count > 0 { total / count as f64 } else { 1.0 };

        let attrs: Option<HashMap<LevelId, &LevelAttributes>> =
            level_attributes.map(|a| a.iter().map(|l| (l.level_id, l)).collect());
        let flag_names: BTreeSet<String> = level_attributes
            .unwrap_or(&[])
            .iter()
            .flat_map(|l| l.flags.keys().cloned())
            .collect();
        let level_features = level_feature_columns(&flag_names, attrs.is_some());
        let mut level_values = HashMap::with_capacity(levels.len());
        for &level in &levels {
            let avg = sums
                .get(&level)
                .map(|(s, n)| s / *n as f64)
                .unwrap_or(fallback);
            let mut v = vec![avg];
            if let Some(attrs) = &attrs {
                let a = attrs.get(&level).ok_or_else(|| {
                    Error::Encoding(format!("level {level} has no level attributes"))
                })?;
                v.push(a.color_entropy);
                v.push(a.color_count as f64);
                v.extend(
                    flag_names
                        .iter()
                        .map(|f| a.flags.get(f).copied().unwrap_or(0) as f64),
                );
            }
            level_values.insert(level, v);
        }

        // standardization over training rows
        let mut normalization = Vec::new();
        for (j, col) in player_features.iter().enumerate() {
            normalization.push(if col.binary {
                Standardizer::IDENTITY
            } else {
                Standardizer::fit(
                    train
                        .records()
                        .iter()
                        .map(|r| player_values[&r.player_id][j]),
                )
            });
        }
        for (j, col) in level_features.iter().enumerate() {
            normalization.push(if col.binary {
                Standardizer::IDENTITY
            } else {
                Standardizer::fit(train.records().iter().map(|r| level_values[&r.level_id][j]))
            });
        }

        Ok(FeatureSet {
            schema: FeatureSchema {
                players,
                levels,
                player_features,
                level_features,
                normalization,
                augmented: augment,
                observed_levels: observed,
                telemetry_available,
            },
            player_values,
            level_values,
            aggregates,
        })
    }

    pub fn aggregates(&self, player: &str) -> Option<&PlayerAggregates> {
        self.aggregates.get(player)
    }

    pub fn player_values(&self, player: &str) -> Option<&[f64]> {
        self.player_values.get(player).map(Vec::as_slice)
    }

    pub fn level_values(&self, level: LevelId) -> Option<&[f64]> {
        self.level_values.get(&level).map(Vec::as_slice)
    }

    /// Names of the dense forest features.
    pub fn dense_feature_names(&self) -> Vec<String> {
        let s = &self.schema;
        s.player_features
            .iter()
            .map(|c| format!("player_{}", c.name))
            .chain(s.level_features.iter().map(|c| format!("level_{}", c.name)))
            .collect()
    }

    pub fn encode(&self, record: &InteractionRecord) -> Result<DesignRow> {
        let s = &self.schema;
        let pc = s
            .player_column(&record.player_id)
            .ok_or_else(|| Error::Encoding(format!("player {} not in schema", record.player_id)))?;
        let lc = s
            .level_column(record.level_id)
            .ok_or_else(|| Error::Encoding(format!("level {} not in schema", record.level_id)))?;
        let mut indices = vec![pc as u32, lc as u32];
        let mut values = vec![1.0, 1.0];
        if s.augmented {
            let pv = &self.player_values[&record.player_id];
            let lv = &self.level_values[&record.level_id];
            let base = s.player_feature_block().start;
            for (j, x) in pv.iter().chain(lv.iter()).enumerate() {
                let z = s.normalization[j].apply(*x);
                if z != 0.0 {
                    indices.push((base + j) as u32);
                    values.push(z);
                }
            }
        }
        DesignRow::new(indices, values, record.attempts as f64)
    }

    pub fn encode_all<'a>(
        &self,
        records: impl IntoParallelIterator<Item = &'a InteractionRecord>,
    ) -> Result<Vec<DesignRow>> {
        records.into_par_iter().map(|r| self.encode(r)).collect()
    }

    pub fn dense_row(&self, record: &InteractionRecord) -> Result<Vec<f64>> {
        let pv = self
            .player_values
            .get(&record.player_id)
            .ok_or_else(|| Error::Encoding(format!("player {} not in schema", record.player_id)))?;
        let lv = self
            .level_values
            .get(&record.level_id)
            .ok_or_else(|| Error::Encoding(format!("level {} not in schema", record.level_id)))?;
        Ok(pv.iter().chain(lv.iter()).copied().collect())
    }
}

// ---------------------------------------------------------------------------
// Rows
// ---------------------------------------------------------------------------

/// Sparse feature row with a regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub target: f64,
}

impl DesignRow {
    /// Sorts entries by index and checks uniqueness and finiteness.
    pub fn new(indices: Vec<u32>, values: Vec<f64>, target: f64) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Contract(format!(
                "row has {} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        let mut pairs: Vec<(u32, f64)> = indices.into_iter().zip(values).collect();
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Contract("row has duplicate column indices".into()));
        }
        if pairs.iter().any(|p| !p.1.is_finite()) || !target.is_finite() {
            return Err(Error::Contract("row has non-finite values".into()));
        }
        let (indices, values) = pairs.into_iter().unzip();
        Ok(DesignRow {
            indices,
            values,
            target,
        })
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(i, x)| (*i as usize, *x))
    }
}

/// Encoded rows for each side of a split.
#[derive(Debug, Clone)]
pub struct FmRows {
    pub train: Vec<DesignRow>,
    pub gap: Vec<DesignRow>,
    pub test: Vec<DesignRow>,
}

pub fn build_fm_rows(split: &Split, features: &FeatureSet) -> Result<FmRows> {
    Ok(FmRows {
        train: features.encode_all(split.train.records())?,
        gap: features.encode_all(split.gap.records())?,
        test: features.encode_all(split.test.records())?,
    })
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "dense matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Copy with column `j` appended again at the end.
    pub fn with_duplicated_column(&self, j: usize) -> Self {
        let mut data = Vec::with_capacity(self.rows * (self.cols + 1));
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.push(self.get(i, j));
        }
        DenseMatrix {
            rows: self.rows,
            cols: self.cols + 1,
            data,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseSet {
    pub x: DenseMatrix,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RfMatrices {
    pub feature_names: Vec<String>,
    pub train: DenseSet,
    pub gap: DenseSet,
    pub test: DenseSet,
}

pub fn dense_set<'a>(
    records: impl IntoParallelIterator<Item = &'a InteractionRecord>,
    features: &FeatureSet,
) -> Result<DenseSet> {
    let rows: Vec<(Vec<f64>, f64)> = records
        .into_par_iter()
        .map(|r| Ok((features.dense_row(r)?, r.attempts as f64)))
        .collect::<Result<_>>()?;
    let cols = features.dense_feature_names().len();
    let mut data = Vec::with_capacity(rows.len() * cols);
    let mut y = Vec::with_capacity(rows.len());
    for (row, target) in rows {
        data.extend(row);
        y.push(target);
    }
    Ok(DenseSet {
        x: DenseMatrix::new(y.len(), cols, data)?,
        y,
    })
}

/// Dense player-aggregate and level-attribute rows; no one-hot identities.
pub fn build_rf_matrix(split: &Split, features: &FeatureSet) -> Result<RfMatrices> {
    Ok(RfMatrices {
        feature_names: features.dense_feature_names(),
        train: dense_set(split.train.records(), features)?,
        gap: dense_set(split.gap.records(), features)?,
        test: dense_set(split.test.records(), features)?,
    })
}
