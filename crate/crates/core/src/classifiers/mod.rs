//! Classifiers over frozen embeddings.

mod forest;
mod knn;
mod linear;
mod tree;

pub use forest::{
    balanced_subset, balanced_subset_with, brf_fit, brf_predict, cart_fit, majority_vote, ForestConfig, ForestModel,
    FOREST_FORMAT, FOREST_VERSION,
};
pub use knn::{knn_baseline, knn_k};
pub use linear::LinearBaseline;
pub use tree::{CartParams, TreeNode};
