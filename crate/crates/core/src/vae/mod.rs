//! The six VAE variants: assembly, ELBO, training, sampling and reconstruction.

mod config;
mod generate;
mod model;
mod train;
mod variant;

pub use config::{batch_size_rule, CategoricalSampling, ModelConfig, TrainConfig};
pub use model::{
    build_model, kl_divergence, reconstruction_loss, schema_hash, Captures, LossParts, LossVars,
    Pass, VaeModel,
};
pub use train::{evaluate_loss, train, train_on, EpochRecord, TrainReport};
pub use variant::{Component, ModelVariant};
