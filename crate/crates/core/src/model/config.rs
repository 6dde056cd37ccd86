use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::AdamConfig;

/// Which hidden state of the score token feeds the bin head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadSource {
    /// Output of the last transformer layer (after the final layer norm).
    #[default]
    LastLayer,
    /// Output of the second-to-last layer (the embeddings when there is one layer).
    PreviousLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_input: usize,
    pub n_image_tokens: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_prompt_tokens: usize,
    /// Filled from the vocabulary when left at zero.
    pub vocab_size: usize,
    pub k_bins: usize,
    pub head_source: HeadSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_input: 16,
            n_image_tokens: 4,
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            max_prompt_tokens: 12,
            vocab_size: 0,
            k_bins: 51,
            head_source: HeadSource::LastLayer,
        }
    }
}

impl ModelConfig {
    /// Image tokens, the longest prompt, and the score-query token.
    pub fn sequence_capacity(&self) -> usize {
        self.n_image_tokens + self.max_prompt_tokens + 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_input == 0 || self.n_image_tokens == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 {
            return bad("need at least one layer".into());
        }
        if self.k_bins < 2 {
            return bad(format!("k_bins {} < 2", self.k_bins));
        }
        if self.vocab_size < super::vocab::RESERVED {
            return bad(format!("vocab_size {} below reserved ids", self.vocab_size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Accepts both 0.03 and the literal 0.0003.
    pub warmup_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Train only the bin head; everything else stays at its initial value.
    pub probe: bool,
    /// Probability of training a sample with its prompt removed, so the
    /// model also sees the image-only input it may be evaluated on.
    pub prompt_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            base_lr: 2e-3,
            warmup_fraction: 0.03,
            adam: AdamConfig::default(),
            seed: 0,
            probe: false,
            prompt_dropout: 0.0,
        }
    }
}
