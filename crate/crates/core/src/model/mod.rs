//! The target tagger: word embeddings (optionally concatenated with a
//! char-CNN), two BiLSTM layers, a softmax intent head and a CRF tag head.
//! The loss is intent cross-entropy plus CRF negative log-likelihood.

mod chars;
mod config;
mod crf;
mod embedding_file;
mod network;
mod params;

pub use chars::CharVocabulary;
pub use config::ModelConfig;
pub use crf::{masked_transitions, CrfScores};
pub use embedding_file::{read_embedding_file, PretrainedStats};
pub use network::{bilstm_forward, char_cnn_embed, dropout, BiLstmOutput, Forward, InputSlot, LossVars};
pub use params::{BiLstmLayer, CharCnnParams, LstmParams, ModelParams, ParamVars};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabelSets, LabeledExample, Vocabulary};
use crate::numerics::rng::Rng;
use crate::numerics::{argmax, Tape, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("label index {label} out of range for {count} labels")]
    LabelOutOfRange { label: usize, count: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown token {0}")]
    UnknownToken(String),
    #[error("embedding file line {line}: {message}")]
    EmbeddingFile { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// An example mapped to vocabulary and label indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub tokens: Vec<usize>,
    pub tags: Vec<usize>,
    pub intent: usize,
}

/// Loss terms and raw scores of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub intent_logits: Vec<f64>,
    pub emissions: Tensor,
    pub intent_loss: f64,
    pub crf_loss: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub intent: usize,
    pub tags: Vec<usize>,
}

/// Architecture, vocabularies, label sets and parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NluModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub chars: CharVocabulary,
    pub labels: LabelSets,
    pub params: ModelParams,
}

impl NluModel {
    /// Freshly initialised model; label counts are taken from `labels`.
    pub fn new(mut config: ModelConfig, vocab: Vocabulary, labels: LabelSets, rng: &mut Rng) -> Result<Self, ModelError> {
        config.intent_count = labels.intents.len();
        config.tag_count = labels.tags.len();
        config.validate()?;
        let chars = CharVocabulary::from_vocabulary(&vocab);
        let params = ModelParams::init(&config, vocab.len(), chars.len(), rng);
        Ok(Self {
            config,
            vocab,
            chars,
            labels,
            params,
        })
    }

    pub fn encode(&self, ex: &LabeledExample) -> Result<EncodedExample, ModelError> {
        let intent = self
            .labels
            .intent_index(&ex.intent)
            .ok_or_else(|| ModelError::UnknownLabel(ex.intent.clone()))?;
        let tags = self.encode_tags(&ex.ner_tags)?;
        if tags.len() != ex.tokens.len() {
            return Err(ModelError::Contract("token/tag length mismatch".into()));
        }
        Ok(EncodedExample {
            tokens: self.vocab.encode(&ex.tokens),
            tags,
            intent,
        })
    }

    pub fn encode_tags(&self, tags: &[String]) -> Result<Vec<usize>, ModelError> {
        tags.iter()
            .map(|t| {
                self.labels
                    .tag_index(t)
                    .ok_or_else(|| ModelError::UnknownLabel(t.clone()))
            })
            .collect()
    }

    /// Loss terms with parameters held constant (no gradients kept).
    pub fn output(&self, ex: &EncodedExample) -> Result<ModelOutput, ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let slots: Vec<InputSlot> = ex.tokens.iter().map(|&t| InputSlot::Token(t)).collect();
        let (fwd, loss) = self.model_loss(&mut tape, &vars, &slots, &[], ex.intent, &ex.tags, None)?;
        Ok(ModelOutput {
            intent_logits: tape.value(fwd.intent_logits).data().to_vec(),
            emissions: tape.value(fwd.emissions).clone(),
            intent_loss: tape.scalar(loss.intent),
            crf_loss: tape.scalar(loss.crf),
            loss: tape.scalar(loss.total),
        })
    }

    /// Arg-max intent and Viterbi tags.
    pub fn predict(&self, tokens: &[usize]) -> Result<Prediction, ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let slots: Vec<InputSlot> = tokens.iter().map(|&t| InputSlot::Token(t)).collect();
        let fwd = self.forward(&mut tape, &vars, &slots, &[], None)?;
        let (intent, _) = argmax(tape.value(fwd.intent_logits).data());
        let crf = CrfScores::new(
            tape.value(fwd.emissions).data(),
            self.params.transitions.data(),
            self.config.tag_count,
        )?;
        Ok(Prediction {
            intent,
            tags: crf.viterbi().0,
        })
    }
}

#[cfg(test)]
mod tests;
