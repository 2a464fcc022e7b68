use serde::{Deserialize, Serialize};

use super::variant::ModelVariant;
use crate::error::{bail, Result};
use crate::numerics::AdamConfig;
use crate::transformer::TransformerConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoricalSampling {
    #[default]
    Argmax,
    Multinomial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    /// Token width.
    pub d: usize,
    /// Hidden token count `H` of the encoder/decoder FC layers.
    pub hidden_tokens: usize,
    /// Latent token count `L`.
    pub latent_tokens: usize,
    pub transformer: TransformerConfig,
    pub categorical_sampling: CategoricalSampling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: ModelVariant::VAE,
            d: 4,
            hidden_tokens: 128,
            latent_tokens: 64,
            transformer: TransformerConfig::default(),
            categorical_sampling: CategoricalSampling::Argmax,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.hidden_tokens == 0 || self.latent_tokens == 0 {
            bail!(InvalidArgument, "d, hidden_tokens and latent_tokens must be positive");
        }
        if self.variant.enc || self.variant.lat || self.variant.dec {
            self.transformer.validate(self.d)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Fixed batch size; `None` applies [`batch_size_rule`].
    pub batch_size: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: None,
            adam: AdamConfig::default(),
        }
    }
}

/// `clamp(2^round(log2(n / 30)), 32, 512)`.
pub fn batch_size_rule(n_train: usize) -> usize {
    if n_train == 0 {
        return 32;
    }
    let e = (n_train as f64 / 30.0).log2().round();
    let b = 2f64.powf(e.clamp(5.0, 9.0));
    b as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ModelConfig::default();
        assert_eq!((c.d, c.hidden_tokens, c.latent_tokens), (4, 128, 64));
        assert_eq!(c.transformer.blocks, 4);
        assert_eq!(c.transformer.heads, 1);
        assert_eq!(c.transformer.hidden, 128);
        assert_eq!(c.transformer.dropout, 0.0);
        assert_eq!(TrainConfig::default().epochs, 500);
    }

    #[test]
    fn batch_rule_values() {
        assert_eq!(batch_size_rule(100), 32);
        assert_eq!(batch_size_rule(1920), 64);
        assert_eq!(batch_size_rule(3840), 128);
        assert_eq!(batch_size_rule(7680), 256);
        assert_eq!(batch_size_rule(1_000_000), 512);
    }
}
