use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, LabeledExample};

/// Train and validation splits.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
}

impl Corpus {
    /// Puts the last `round(val_fraction * len)` examples in validation.
    pub fn split(examples: Vec<LabeledExample>, val_fraction: f64) -> Self {
        let n_val = ((examples.len() as f64) * val_fraction).round() as usize;
        let n_val = n_val.min(examples.len());
        let mut train = examples;
        let val = train.split_off(train.len() - n_val);
        Self { train, val }
    }

    pub fn all(&self) -> impl Iterator<Item = &LabeledExample> {
        self.train.iter().chain(&self.val)
    }

    pub fn label_sets(&self) -> LabelSets {
        LabelSets::from_examples(self.all())
    }
}

/// Sorted label inventories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSets {
    pub intents: Vec<String>,
    pub tags: Vec<String>,
}

impl LabelSets {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a LabeledExample>) -> Self {
        let mut intents = BTreeSet::new();
        let mut tags = BTreeSet::new();
        for ex in examples {
            intents.insert(ex.intent.clone());
            tags.extend(ex.ner_tags.iter().cloned());
        }
        Self {
            intents: intents.into_iter().collect(),
            tags: tags.into_iter().collect(),
        }
    }

    pub fn intent_index(&self, intent: &str) -> Option<usize> {
        self.intents.binary_search_by(|s| s.as_str().cmp(intent)).ok()
    }

    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        self.tags.binary_search_by(|s| s.as_str().cmp(tag)).ok()
    }
}

/// Reads one JSON object per line (`tokens`, `ner_tags`, `intent`). Blank
/// lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Vec<LabeledExample>, LabelSets), DataError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: LabeledExample = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        ex.validate().map_err(|message| DataError::Parse {
            line: i + 1,
            message: format!("{message} in record {:?}", ex.utterance()),
        })?;
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(DataError::EmptyCorpus(path.display().to_string()));
    }
    let labels = LabelSets::from_examples(&examples);
    Ok((examples, labels))
}

pub fn save_corpus<'a>(
    path: impl AsRef<Path>,
    examples: impl IntoIterator<Item = &'a LabeledExample>,
) -> Result<(), DataError> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut out, ex).map_err(|e| DataError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
