use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;

/// Character inventory for the char-CNN. Index 0 stands for unseen characters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharVocabulary {
    chars: Vec<char>,
}

impl CharVocabulary {
    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        let set: BTreeSet<char> = vocab.tokens().iter().flat_map(|t| t.chars()).collect();
        Self {
            chars: std::iter::once('\u{0}').chain(set).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn index(&self, c: char) -> usize {
        self.chars[1..]
            .binary_search(&c)
            .map(|i| i + 1)
            .unwrap_or(0)
    }

    /// Character indices of `token`; an empty token maps to a single unknown char.
    pub fn encode(&self, token: &str) -> Vec<usize> {
        let ids: Vec<usize> = token.chars().map(|c| self.index(c)).collect();
        if ids.is_empty() {
            vec![0]
        } else {
            ids
        }
    }
}
