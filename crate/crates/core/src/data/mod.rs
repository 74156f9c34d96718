//! Corpus ingestion, vocabularies, canary generation and injection.

mod canary;
mod corpus;
mod example;
mod synth;
mod vocab;

pub use canary::{
    canary_tags, generate_canary, generate_canary_with, inject_canary, split_repetitions,
    CanarySpec, DigitFormat, Pattern, CANARY_BEGIN, CANARY_INSIDE, COLORS, DIGIT_NUMERALS,
    DIGIT_WORDS,
};
pub use corpus::{load_corpus, save_corpus, Corpus, LabelSets};
pub use example::{validate_bio, LabeledExample};
pub use synth::{synth_corpus, Grammar, IntentTemplates, SlotFillers};
pub use vocab::{ReducedVocabulary, Vocabulary, UNK};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corpus {0} contains no examples")]
    EmptyCorpus(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("unknown canary pattern {0:?} (expected call, pin or color)")]
    UnknownPattern(String),
    #[error("invalid canary: {0}")]
    InvalidCanary(String),
    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),
    #[error("reduced vocabulary must not be empty")]
    EmptyReducedVocabulary,
}
