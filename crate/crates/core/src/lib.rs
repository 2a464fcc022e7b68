//! Variational autoencoders with optional Transformer stacks at the encoder,
//! latent and decoder positions, for mixed-type tabular data.
//!
//! The crate covers the whole study pipeline: ingest and preprocess a table
//! ([`dataio`]), build and train one of six architecture variants ([`vae`]),
//! sample synthetic rows, score them ([`metrics`]) and inspect internal
//! representations ([`analysis`]). [`experiment`] ties the stages together.

pub mod analysis;
pub mod dataio;
pub mod datasets;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod numerics;
pub mod transformer;
pub mod vae;

pub use error::{Error, Result};
