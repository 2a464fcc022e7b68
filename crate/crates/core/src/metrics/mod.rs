//! Fidelity, diversity and downstream-utility scores of synthetic rows
//! against real ones. Every score lies in [0, 1], higher is better.

mod columns;
mod density;
mod gbt;
mod marginal;
mod ml;
mod pairwise;
mod report;

pub use columns::{FeatureScore, FeatureTable, FeatureValues};
pub use density::{
    alpha_precision, beta_recall, euclidean, BetaMatch, quantile_grid, quantile_sorted, CurvePoint, CurveScore, NeighbourSet,
    DEFAULT_K,
};
pub use gbt::{gbt_train, ClassifierConfig, Gbt, Node, Tree};
pub use marginal::{ks_score, marginals_score, tvd_score, MarginalsReport};
pub use ml::{accuracy, features_and_labels, ml_efficiency, MlEfficiency};
pub use pairwise::{
    contingency_similarity, correlation_pair_score, equal_width_bins, pairwise_score, pearson, PairScore,
    PairwiseReport, DEFAULT_BINS,
};
pub use report::{evaluate, MetricsConfig, MetricsReport};
