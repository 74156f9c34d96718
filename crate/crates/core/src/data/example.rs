use serde::{Deserialize, Serialize};

/// One pre-tokenized utterance with per-token BIO tags and an intent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub tokens: Vec<String>,
    pub ner_tags: Vec<String>,
    pub intent: String,
}

impl LabeledExample {
    pub fn new<S: Into<String>>(tokens: Vec<S>, ner_tags: Vec<S>, intent: impl Into<String>) -> Self {
        Self {
            tokens: tokens.into_iter().map(Into::into).collect(),
            ner_tags: ner_tags.into_iter().map(Into::into).collect(),
            intent: intent.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks lengths and BIO well-formedness; the error names the problem.
    pub fn validate(&self) -> Result<(), String> {
        if self.tokens.is_empty() {
            return Err("example has no tokens".into());
        }
        if self.tokens.len() != self.ner_tags.len() {
            return Err(format!(
                "{} tokens but {} tags",
                self.tokens.len(),
                self.ner_tags.len()
            ));
        }
        if self.intent.is_empty() {
            return Err("empty intent".into());
        }
        validate_bio(&self.ner_tags)
    }

    pub fn utterance(&self) -> String {
        self.tokens.join(" ")
    }
}

/// No `I-x` may start a span, and `I-x` must continue a `B-x` or `I-x`.
pub fn validate_bio(tags: &[String]) -> Result<(), String> {
    let mut open: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        if tag == "O" {
            open = None;
        } else if let Some(kind) = tag.strip_prefix("B-").filter(|k| !k.is_empty()) {
            open = Some(kind);
        } else if let Some(kind) = tag.strip_prefix("I-").filter(|k| !k.is_empty()) {
            if open != Some(kind) {
                return Err(format!("tag {i} ({tag}) does not continue a {kind} span"));
            }
        } else {
            return Err(format!("tag {i} ({tag}) is not O, B-x or I-x"));
        }
    }
    Ok(())
}
