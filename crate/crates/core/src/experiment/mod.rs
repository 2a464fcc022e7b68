//! Config-driven runner: preprocess, train each variant, sample, score,
//! analyze and write a checksummed run directory.

mod config;
mod run;

pub use config::{generate, AnalysisConfig, DatasetConfig, ExperimentConfig, Seeds};
pub use run::{
    analysis_rows, analyze_model, components_of, hash_tree, report, run_experiment, train_variant, write_synthetic,
    write_train_report, DatasetInfo, FileEntry, ReportOutputs, RunManifest, StageRecord, StageStatus,
};
