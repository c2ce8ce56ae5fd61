//! Per-player level difficulty prediction for puzzle games.
//!
//! The crate predicts how many attempts a given player will need on a given
//! level. It contains a Bayesian factorization machine trained by Gibbs
//! sampling ([`trainer`]), a naive per-level average and a random forest
//! ([`baselines`]), the observed-level evaluation protocol ([`eval`]), tools
//! for interpreting learned factors ([`analysis`]) and a synthetic telemetry
//! generator with known ground truth ([`synth`]).

pub mod analysis;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod fm;
pub mod synth;
pub mod trainer;

pub use dataset::{
    load_interactions, split_players, Dataset, InteractionRecord, LevelId, PlayerId, Split,
    SplitSpec,
};
pub use error::{Error, Result};
pub use features::{DesignRow, FeatureSchema, FeatureSet};
pub use fm::FmModel;
pub use trainer::{train_predict, McmcConfig};
