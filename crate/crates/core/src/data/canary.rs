use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Corpus, DataError, LabeledExample};
use crate::numerics::rng::rng_from_seed;

pub const DIGIT_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];
pub const DIGIT_NUMERALS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
pub const COLORS: [&str; 12] = [
    "red", "green", "lilac", "blue", "yellow", "brown", "cyan", "magenta", "orange", "pink",
    "purple", "mauve",
];

pub const CANARY_BEGIN: &str = "B-canary";
pub const CANARY_INSIDE: &str = "I-canary";

/// How digit secrets are spelled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigitFormat {
    #[default]
    Words,
    Numerals,
}

/// Canary template: a fixed prefix followed by secret tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Call,
    Pin,
    Color,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Call, Pattern::Pin, Pattern::Color];

    pub fn prefix(self) -> &'static [&'static str] {
        match self {
            Pattern::Call => &["call"],
            Pattern::Pin => &["my", "pin", "code", "is"],
            Pattern::Color => &["color"],
        }
    }

    pub fn intent(self) -> &'static str {
        match self {
            Pattern::Call => "CallIntent",
            Pattern::Pin => "PinIntent",
            Pattern::Color => "ColorIntent",
        }
    }

    /// Tokens the secret is drawn from; also the default reduced vocabulary.
    pub fn secret_tokens(self, format: DigitFormat) -> &'static [&'static str] {
        match (self, format) {
            (Pattern::Color, _) => &COLORS,
            (_, DigitFormat::Words) => &DIGIT_WORDS,
            (_, DigitFormat::Numerals) => &DIGIT_NUMERALS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Call => "call",
            Pattern::Pin => "pin",
            Pattern::Color => "color",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "call" => Ok(Pattern::Call),
            "pin" => Ok(Pattern::Pin),
            "color" => Ok(Pattern::Color),
            other => Err(DataError::UnknownPattern(other.to_string())),
        }
    }
}

/// `O` for each prefix token, then `B-canary I-canary ...` over the secret.
pub fn canary_tags(prefix_len: usize, n: usize) -> Vec<String> {
    let mut tags = vec!["O".to_string(); prefix_len];
    for i in 0..n {
        tags.push(if i == 0 { CANARY_BEGIN } else { CANARY_INSIDE }.to_string());
    }
    tags
}

/// A secret utterance and the labels it is trained with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanarySpec {
    pub pattern: Pattern,
    pub prefix: Vec<String>,
    pub unknown: Vec<String>,
    pub intent: String,
    pub tags: Vec<String>,
    pub repetitions: usize,
    pub seed: u64,
}

impl CanarySpec {
    pub fn n(&self) -> usize {
        self.unknown.len()
    }

    pub fn with_repetitions(mut self, repetitions: usize) -> Self {
        self.repetitions = repetitions;
        self
    }

    pub fn example(&self) -> LabeledExample {
        LabeledExample {
            tokens: self.prefix.iter().chain(&self.unknown).cloned().collect(),
            ner_tags: self.tags.clone(),
            intent: self.intent.clone(),
        }
    }

    /// `(train copies, validation copies)`: `round(0.9 R)` and the rest.
    pub fn split_counts(&self) -> (usize, usize) {
        split_repetitions(self.repetitions)
    }
}

pub fn split_repetitions(repetitions: usize) -> (usize, usize) {
    let train = ((repetitions as f64) * 0.9).round() as usize;
    (train, repetitions - train)
}

/// Draws `n` secret tokens i.i.d. uniformly from the pattern's token set.
pub fn generate_canary(pattern: Pattern, n: usize, seed: u64) -> Result<CanarySpec, DataError> {
    generate_canary_with(pattern, n, seed, DigitFormat::Words)
}

pub fn generate_canary_with(
    pattern: Pattern,
    n: usize,
    seed: u64,
    format: DigitFormat,
) -> Result<CanarySpec, DataError> {
    if n == 0 {
        return Err(DataError::InvalidCanary("n must be at least 1".into()));
    }
    let set = pattern.secret_tokens(format);
    let mut rng = rng_from_seed(seed);
    let unknown = (0..n)
        .map(|_| set[rng.gen_range(0..set.len())].to_string())
        .collect();
    let prefix: Vec<String> = pattern.prefix().iter().map(|s| s.to_string()).collect();
    Ok(CanarySpec {
        pattern,
        tags: canary_tags(prefix.len(), n),
        prefix,
        unknown,
        intent: pattern.intent().to_string(),
        repetitions: 1,
        seed,
    })
}

/// Appends the canary's copies to train and validation.
pub fn inject_canary(corpus: &Corpus, spec: &CanarySpec) -> Result<Corpus, DataError> {
    if spec.repetitions == 0 {
        return Err(DataError::InvalidCanary("repetitions must be at least 1".into()));
    }
    let ex = spec.example();
    ex.validate().map_err(DataError::InvalidCanary)?;
    let (n_train, n_val) = spec.split_counts();
    let mut out = corpus.clone();
    out.train.extend(std::iter::repeat_n(ex.clone(), n_train));
    out.val.extend(std::iter::repeat_n(ex, n_val));
    Ok(out)
}
