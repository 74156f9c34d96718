use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Cell, ExperimentError};
use crate::attack::AttackConfig;
use crate::data::{load_corpus, synth_corpus, Corpus, DataError, DigitFormat, Grammar, Pattern};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Defense {
    #[serde(rename = "D")]
    Dropout,
    #[serde(rename = "ES")]
    EarlyStopping,
    #[serde(rename = "CE")]
    CharEmbeddings,
}

impl Defense {
    pub fn as_str(self) -> &'static str {
        match self {
            Defense::Dropout => "D",
            Defense::EarlyStopping => "ES",
            Defense::CharEmbeddings => "CE",
        }
    }
}

impl std::str::FromStr for Defense {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "D" => Ok(Defense::Dropout),
            "ES" => Ok(Defense::EarlyStopping),
            "CE" => Ok(Defense::CharEmbeddings),
            other => Err(format!("unknown defense {other:?} (expected D, ES or CE)")),
        }
    }
}

/// `none`, or the sorted defenses joined with `+`.
pub fn defense_label(defenses: &[Defense]) -> String {
    if defenses.is_empty() {
        return "none".into();
    }
    let mut d = defenses.to_vec();
    d.sort();
    d.dedup();
    d.iter().map(|d| d.as_str()).collect::<Vec<_>>().join("+")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Annealed-softmax optimization over candidate tokens.
    Discrete,
    /// Free embedding vectors decoded by nearest neighbour.
    Continuous,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Discrete => "discrete",
            Method::Continuous => "continuous",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    /// Built-in template grammar.
    Synth {
        size: usize,
        seed: u64,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    /// JSON-lines files; without `val`, the tail of `train` is split off.
    Files {
        train: PathBuf,
        #[serde(default)]
        val: Option<PathBuf>,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
}

fn default_val_fraction() -> f64 {
    0.1
}

impl CorpusSource {
    pub fn load(&self) -> Result<Corpus, DataError> {
        match self {
            CorpusSource::Synth {
                size,
                seed,
                val_fraction,
            } => Ok(Corpus::split(synth_corpus(&Grammar::default(), *size, *seed)?, *val_fraction)),
            CorpusSource::Files {
                train,
                val: Some(val),
                ..
            } => Ok(Corpus {
                train: load_corpus(train)?.0,
                val: load_corpus(val)?.0,
            }),
            CorpusSource::Files {
                train,
                val: None,
                val_fraction,
            } => Ok(Corpus::split(load_corpus(train)?.0, *val_fraction)),
        }
    }
}

fn default_trials() -> usize {
    10
}

fn default_defenses() -> Vec<Vec<Defense>> {
    vec![vec![]]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Discrete]
}

fn default_workers() -> usize {
    1
}

/// A sweep definition, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub corpus: CorpusSource,
    pub patterns: Vec<Pattern>,
    pub n: Vec<usize>,
    pub repetitions: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Each entry is one defense combination; `[]` means undefended.
    #[serde(default = "default_defenses")]
    pub defenses: Vec<Vec<Defense>>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub digit_format: DigitFormat,
    /// Candidate tokens; defaults to the pattern's secret token set.
    #[serde(default)]
    pub v0: Option<Vec<String>>,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.patterns.is_empty() || self.n.is_empty() || self.repetitions.is_empty() || self.defenses.is_empty() {
            return bad("patterns, n, repetitions and defenses must be non-empty".into());
        }
        if self.n.contains(&0) || self.repetitions.contains(&0) {
            return bad("n and repetitions must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("at least one attack method is required".into());
        }
        let mut methods = self.methods.clone();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return bad("attack methods must not repeat".into());
        }
        let labels: Vec<String> = self.defenses.iter().map(|d| defense_label(d)).collect();
        let mut unique = labels.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != labels.len() {
            return bad("defense combinations must not repeat".into());
        }
        self.train.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.attack.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    /// Cells in grid order: pattern, n, R, then defense combination.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &pattern in &self.patterns {
            for &n in &self.n {
                for &repetitions in &self.repetitions {
                    for d in &self.defenses {
                        let mut defenses = d.clone();
                        defenses.sort();
                        defenses.dedup();
                        out.push(Cell {
                            pattern,
                            n,
                            repetitions,
                            defenses,
                        });
                    }
                }
            }
        }
        out
    }

    /// SHA-256 over the settings that influence results (everything except
    /// the output directory and worker count).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Every combination of the three defenses, undefended first.
    pub fn all_defense_combinations() -> Vec<Vec<Defense>> {
        use Defense::*;
        vec![
            vec![],
            vec![Dropout],
            vec![EarlyStopping],
            vec![CharEmbeddings],
            vec![Dropout, EarlyStopping],
            vec![Dropout, CharEmbeddings],
            vec![EarlyStopping, CharEmbeddings],
            vec![Dropout, EarlyStopping, CharEmbeddings],
        ]
    }
}
