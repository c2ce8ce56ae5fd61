//! Comparison methods: the per-level average and a random forest regressor.

mod forest;
mod naive;
mod tree;

pub use forest::{
    bootstrap_indices, fit_forest, predict_forest, write_importances, ForestConfig,
    RandomForestModel,
};
pub use naive::{fit_naive, predict_naive, NaiveBaselineModel};
pub use tree::{Node, RegressionTree, TreeConfig};
