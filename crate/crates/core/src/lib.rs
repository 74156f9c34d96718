//! Canary extraction auditing for joint intent-classification / NER models.
//!
//! The crate trains a BiLSTM-CRF tagger with an intent head on a corpus that
//! contains secret "canary" utterances, then tries to recover the canary's
//! secret tokens from the trained parameters alone by optimizing a
//! temperature-annealed softmax over candidate tokens. Metrics and defenses
//! (dropout, early stopping, character embeddings) are included so the
//! leakage can be measured end to end.

pub mod numerics;
pub mod data;
pub mod model;
pub mod training;
pub mod attack;
pub mod eval;
pub mod experiment;
