//! Interaction telemetry: loading, preprocessing and the player split protocol.
//!
//! A [`Dataset`] holds one record per (player, level) first completion. Attempts
//! are capped at [`ATTEMPT_CAP`] on construction. [`split_players`] holds out a
//! seeded fraction of players whose late levels form the test set, while their
//! first `observed_levels` levels are folded into training.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attempts above this value are truncated to it.
pub const ATTEMPT_CAP: u32 = 30;

/// Opaque player identifier.
pub type PlayerId = String;

/// Level number; also its ordinal position in the level sequence.
pub type LevelId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub player_id: PlayerId,
    pub level_id: LevelId,
    pub attempts: u32,
}

impl InteractionRecord {
    pub fn new(player_id: impl Into<PlayerId>, level_id: LevelId, attempts: u32) -> Self {
        InteractionRecord {
            player_id: player_id.into(),
            level_id,
            attempts,
        }
    }
}

pub fn truncate_attempts(attempts: u32) -> u32 {
    attempts.min(ATTEMPT_CAP)
}

/// Preprocessed, validated collection of interaction records.
///
/// Records are sorted by `(player_id, level_id)`. Player and level indices are
/// dense and assigned in sorted id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<InteractionRecord>,
    player_index: BTreeMap<PlayerId, usize>,
    level_index: BTreeMap<LevelId, usize>,
    max_level: LevelId,
    truncated: usize,
}

impl Dataset {
    /// Validates, truncates and indexes `records`.
    pub fn new(mut records: Vec<InteractionRecord>) -> Result<Self> {
        let mut truncated = 0;
        for r in &mut records {
            if r.attempts < 1 {
                return Err(Error::Validation(format!(
                    "player {} level {}: attempts must be >= 1, got {}",
                    r.player_id, r.level_id, r.attempts
                )));
            }
            if r.level_id < 1 {
                return Err(Error::Validation(format!(
                    "player {}: level_id must be >= 1",
                    r.player_id
                )));
            }
            if r.attempts > ATTEMPT_CAP {
                truncated += 1;
                r.attempts = truncate_attempts(r.attempts);
            }
        }
        records.sort_by(|a, b| {
            a.player_id
                .cmp(&b.player_id)
                .then(a.level_id.cmp(&b.level_id))
        });
        for pair in records.windows(2) {
            if pair[0].player_id == pair[1].player_id && pair[0].level_id == pair[1].level_id {
                return Err(Error::Validation(format!(
                    "duplicate record for player {} level {}",
                    pair[0].player_id, pair[0].level_id
                )));
            }
        }

        let players: BTreeSet<&str> = records.iter().map(|r| r.player_id.as_str()).collect();
        let levels: BTreeSet<LevelId> = records.iter().map(|r| r.level_id).collect();
        let player_index = players
            .into_iter()
            .enumerate()
            .map(|(i, p)| (p.to_string(), i))
            .collect();
        let max_level = levels.iter().next_back().copied().unwrap_or(0);
        let level_index = levels
            .into_iter()
            .enumerate()
            .map(|(i, l)| (l, i))
            .collect();

        Ok(Dataset {
            records,
            player_index,
            level_index,
            max_level,
            truncated,
        })
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn player_index(&self) -> &BTreeMap<PlayerId, usize> {
        &self.player_index
    }

    pub fn level_index(&self) -> &BTreeMap<LevelId, usize> {
        &self.level_index
    }

    pub fn player_count(&self) -> usize {
        self.player_index.len()
    }

    pub fn level_count(&self) -> usize {
        self.level_index.len()
    }

    pub fn max_level(&self) -> LevelId {
        self.max_level
    }

    /// Number of records whose attempts were capped during construction.
    pub fn truncated_count(&self) -> usize {
        self.truncated
    }

    /// Contiguous slice of one player's records, sorted by level.
    pub fn player_records(&self, player: &str) -> &[InteractionRecord] {
        let start = self
            .records
            .partition_point(|r| r.player_id.as_str() < player);
        let end = self.records[start..].partition_point(|r| r.player_id.as_str() == player);
        &self.records[start..start + end]
    }

    /// Iterates `(player_id, records)` groups in player order.
    pub fn by_player(&self) -> impl Iterator<Item = (&str, &[InteractionRecord])> {
        self.records
            .chunk_by(|a, b| a.player_id == b.player_id)
            .map(|chunk| (chunk[0].player_id.as_str(), chunk))
    }

    /// Writes the canonical CSV form (`player_id,level_id,attempts`).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads interactions from a CSV stream with header `player_id,level_id,attempts`.
pub fn read_interactions<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in ["player_id", "level_id", "attempts"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Parse {
                line: 1,
                message: format!("missing column `{col}`"),
            });
        }
    }
    let mut records = Vec::new();
    for row in rdr.deserialize::<RawRecord>() {
        let raw = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        records.push(InteractionRecord {
            player_id: raw.player_id,
            level_id: raw.level_id,
            attempts: raw.attempts,
        });
    }
    Dataset::new(records)
}

pub fn load_interactions(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_interactions(std::io::BufReader::new(file))
}

#[derive(Deserialize)]
struct RawRecord {
    player_id: String,
    level_id: LevelId,
    attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub observed_levels: LevelId,
    pub eval_level_floor: LevelId,
    /// Players need a complete history up to this level to be eligible.
    /// `None` means `eval_level_floor + 50`.
    #[serde(default)]
    pub min_history: Option<LevelId>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.01,
            observed_levels: 10,
            eval_level_floor: 150,
            min_history: None,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_observed(&self, observed_levels: LevelId) -> Self {
        SplitSpec {
            observed_levels,
            ..self.clone()
        }
    }

    pub fn history_floor(&self) -> LevelId {
        self.min_history.unwrap_or(self.eval_level_floor + 50)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.observed_levels < 1 {
            return Err(Error::Config("observed_levels must be >= 1".into()));
        }
        if self.observed_levels > self.eval_level_floor {
            return Err(Error::Config(format!(
                "observed_levels ({}) exceeds eval_level_floor ({})",
                self.observed_levels, self.eval_level_floor
            )));
        }
        Ok(())
    }
}

/// Result of [`split_players`].
///
/// Every record of a test player lands in exactly one of `train` (levels up to
/// the observation horizon), `gap` (unobserved levels up to the evaluation
/// floor) or `test` (levels above the floor).
#[derive(Debug, Clone)]
pub struct Split {
    pub spec: SplitSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub gap: Dataset,
    pub test_players: BTreeSet<PlayerId>,
    pub excluded_players: usize,
}

impl Split {
    /// Records of test players that were not observed: `gap` followed by `test`.
    pub fn unobserved(&self) -> impl Iterator<Item = &InteractionRecord> {
        self.gap.records().iter().chain(self.test.records())
    }

    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            spec: self.spec.clone(),
            test_players: self.test_players.iter().cloned().collect(),
            excluded_players: self.excluded_players,
            train_records: self.train.len(),
            test_records: self.test.len(),
            gap_records: self.gap.len(),
        }
    }
}

/// JSON audit record of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub spec: SplitSpec,
    pub test_players: Vec<PlayerId>,
    pub excluded_players: usize,
    pub train_records: usize,
    pub test_records: usize,
    pub gap_records: usize,
}

fn has_complete_history(records: &[InteractionRecord], floor: LevelId) -> bool {
    // records are sorted by level and unique, so levels 1..=floor are present
    // iff the floor-th record (if any) has level id == floor
    let upto = records.partition_point(|r| r.level_id <= floor);
    upto == floor as usize && records[..upto].first().map(|r| r.level_id) == Some(1)
}

pub fn split_players(data: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Protocol("cannot split an empty dataset".into()));
    }
    let floor = spec.history_floor();
    let mut eligible: Vec<&str> = Vec::new();
    let mut excluded = 0;
    for (player, records) in data.by_player() {
        if has_complete_history(records, floor) {
            eligible.push(player);
        } else {
            excluded += 1;
        }
    }
    if excluded > 0 {
        warn!("{excluded} players excluded: incomplete history up to level {floor}");
    }
    if eligible.len() < 2 {
        return Err(Error::Protocol(format!(
            "need at least 2 eligible players, found {}",
            eligible.len()
        )));
    }

    let n_test = ((spec.test_fraction * eligible.len() as f64).round() as usize)
        .max(1)
        .min(eligible.len() - 1);
    let mut order = eligible.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let test_players: BTreeSet<PlayerId> = order[..n_test].iter().map(|p| p.to_string()).collect();
    let eligible: BTreeSet<&str> = eligible.into_iter().collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut gap = Vec::new();
    for r in data.records() {
        if !eligible.contains(r.player_id.as_str()) {
            continue;
        }
        if !test_players.contains(&r.player_id) || r.level_id <= spec.observed_levels {
            train.push(r.clone());
        } else if r.level_id > spec.eval_level_floor {
            test.push(r.clone());
        } else {
            gap.push(r.clone());
        }
    }

    Ok(Split {
        spec: spec.clone(),
        train: Dataset::new(train)?,
        test: Dataset::new(test)?,
        gap: Dataset::new(gap)?,
        test_players,
        excluded_players: excluded,
    })
}
