use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters of the joint intent/NER tagger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    /// Hidden units per LSTM direction.
    pub hidden_dim: usize,
    pub num_bilstm_layers: usize,
    /// Filled in from the label sets when a model is built.
    pub intent_count: usize,
    /// Filled in from the label sets when a model is built.
    pub tag_count: usize,
    pub char_embeddings_enabled: bool,
    pub char_emb_dim: usize,
    pub char_conv_width: usize,
    pub char_filter_count: usize,
    /// Dropout on the embedding output when training with dropout.
    pub dropout_embed: f64,
    /// Dropout between the two BiLSTM layers when training with dropout.
    pub dropout_interlayer: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 50,
            hidden_dim: 64,
            num_bilstm_layers: 2,
            intent_count: 0,
            tag_count: 0,
            char_embeddings_enabled: false,
            char_emb_dim: 16,
            char_conv_width: 3,
            char_filter_count: 30,
            dropout_embed: 0.2,
            dropout_interlayer: 0.1,
        }
    }
}

impl ModelConfig {
    /// Width of the vector fed to the first BiLSTM layer.
    pub fn input_dim(&self) -> usize {
        self.embedding_dim
            + if self.char_embeddings_enabled {
                self.char_filter_count
            } else {
                0
            }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.num_bilstm_layers != 2 {
            return bad("num_bilstm_layers is fixed at 2");
        }
        if self.embedding_dim == 0 || self.hidden_dim == 0 {
            return bad("embedding_dim and hidden_dim must be positive");
        }
        if self.intent_count == 0 || self.tag_count == 0 {
            return bad("intent_count and tag_count must be positive");
        }
        if self.char_embeddings_enabled
            && (self.char_emb_dim == 0 || self.char_conv_width == 0 || self.char_filter_count == 0)
        {
            return bad("character CNN dimensions must be positive");
        }
        for p in [self.dropout_embed, self.dropout_interlayer] {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout rates must lie in [0, 1)");
            }
        }
        Ok(())
    }
}
