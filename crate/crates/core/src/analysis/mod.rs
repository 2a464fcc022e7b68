//! Representation analytics over captured Transformer activations, plus the
//! cross-model statistics used to compare variants.

mod cka;
mod gains;
mod sigma;
mod wilcoxon;

pub use cka::{capture_similarity_grid, capture_trace, linear_cka, linear_cka_with, similarity_grid, SimilarityReport};
pub use gains::{gain_aggregation, DatasetReports, GainRow, GainTable, Sequence};
pub use sigma::{residual_sigma, BlockSigma, BoxStats, LabelNorms, SigmaReport};
pub use wilcoxon::{midranks, wilcoxon_signed_rank, PMethod, WilcoxonResult, EXACT_MAX_N};
