use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture and training hyperparameters for one run.
///
/// Defaults follow the published recipe: Adam at 1e-4, batch 64, dropout
/// 0.2, 8 heads, 3 attention layers, BiGRU hidden size 512 (256 per
/// direction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub embed_dim: usize,
    /// Concatenated BiGRU output width; each direction gets half.
    pub gru_hidden: usize,
    pub dropout: f64,
    pub max_len: usize,
    /// Filled in from the vocabulary when a model is built.
    pub vocab_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub min_count: usize,
    pub remove_stop_words: bool,
    /// Score denominator sqrt(D) instead of sqrt(D / #H).
    pub scale_full_dim: bool,
    /// Drop the residual add and layer norm around each attention layer.
    pub no_residual: bool,
    /// Keep updating embeddings that were loaded from a file.
    pub fine_tune_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            num_heads: 8,
            embed_dim: 64,
            gru_hidden: 512,
            dropout: 0.2,
            max_len: crate::text::DEFAULT_MAX_LEN,
            vocab_size: 0,
            seed: 1,
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 30,
            min_count: 1,
            remove_stop_words: false,
            scale_full_dim: false,
            no_residual: false,
            fine_tune_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Hidden width of one GRU direction.
    pub fn direction_hidden(&self) -> usize {
        self.gru_hidden / 2
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| Err(ModelError::Config(reason));
        if self.num_heads == 0 {
            return bad("num_heads must be at least 1".into());
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.gru_hidden < 2 || !self.gru_hidden.is_multiple_of(2) {
            return bad(format!(
                "gru_hidden {} must be even and ≥ 2",
                self.gru_hidden
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1".into());
        }
        if self.vocab_size < 2 {
            return bad(format!(
                "vocab_size {} leaves no room for PAD/UNK",
                self.vocab_size
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_recipe() {
        let c = ModelConfig::default();
        assert_eq!((c.num_heads, c.num_layers, c.gru_hidden), (8, 3, 512));
        assert_eq!((c.learning_rate, c.batch_size, c.dropout), (1e-4, 64, 0.2));
    }

    #[test]
    fn rejects_bad_shapes() {
        let ok = ModelConfig {
            vocab_size: 10,
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        assert!(ModelConfig {
            embed_dim: 60,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            gru_hidden: 7,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            dropout: 1.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(ModelConfig { num_heads: 0, ..ok }.validate().is_err());
    }
}
