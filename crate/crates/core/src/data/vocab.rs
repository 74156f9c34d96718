use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{DataError, LabeledExample};

pub const UNK: &str = "<unk>";

/// Token inventory. Index 0 is always [`UNK`]; the rest are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// All tokens of `examples` plus `extra` (e.g. candidate secret tokens).
    pub fn build<'a, 'b>(
        examples: impl IntoIterator<Item = &'a LabeledExample>,
        extra: impl IntoIterator<Item = &'b str>,
    ) -> Self {
        let mut set: BTreeSet<String> = BTreeSet::new();
        for ex in examples {
            set.extend(ex.tokens.iter().cloned());
        }
        set.extend(extra.into_iter().map(str::to_string));
        set.remove(UNK);
        let tokens = std::iter::once(UNK.to_string()).chain(set).collect::<Vec<_>>();
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk(&self) -> usize {
        0
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn index_or_unk(&self, token: &str) -> usize {
        self.index(token).unwrap_or(0)
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps tokens to indices; out-of-vocabulary tokens are an error.
    pub fn encode_strict(&self, tokens: &[String]) -> Result<Vec<usize>, DataError> {
        tokens
            .iter()
            .map(|t| self.index(t).ok_or_else(|| DataError::UnknownToken(t.clone())))
            .collect()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_or_unk(t)).collect()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Ordered subset of vocabulary indices the attack optimizes over.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducedVocabulary {
    indices: Vec<usize>,
}

impl ReducedVocabulary {
    pub fn from_tokens<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> Result<Self, DataError> {
        if tokens.is_empty() {
            return Err(DataError::EmptyReducedVocabulary);
        }
        let mut seen = BTreeSet::new();
        let mut indices = Vec::with_capacity(tokens.len());
        for t in tokens {
            let i = vocab
                .index(t.as_ref())
                .ok_or_else(|| DataError::UnknownToken(t.as_ref().to_string()))?;
            if seen.insert(i) {
                indices.push(i);
            }
        }
        Ok(Self { indices })
    }

    /// Every non-UNK token.
    pub fn full(vocab: &Vocabulary) -> Self {
        Self {
            indices: (1..vocab.len()).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn tokens<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.indices.iter().map(|&i| vocab.token(i)).collect()
    }
}
