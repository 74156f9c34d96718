//! Exact-match accuracy, Hamming distance per token, analytic random-guess
//! baselines, and multi-trial aggregation with JSON/CSV export.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CanarySpec;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Fraction of positions where `truth` and `guess` differ.
pub fn hamming_distance_per_token<S: AsRef<str>, T: AsRef<str>>(truth: &[S], guess: &[T]) -> Result<f64, EvalError> {
    if truth.is_empty() || truth.len() != guess.len() {
        return Err(EvalError::Contract(format!(
            "sequences of length {} and {} cannot be compared",
            truth.len(),
            guess.len()
        )));
    }
    let mismatches = truth
        .iter()
        .zip(guess)
        .filter(|(a, b)| a.as_ref() != b.as_ref())
        .count();
    Ok(mismatches as f64 / truth.len() as f64)
}

/// Expected accuracy and HDT of guessing each token uniformly from `v0_size`.
pub fn random_baseline(n: usize, v0_size: usize) -> Result<(f64, f64), EvalError> {
    if n == 0 || v0_size < 2 {
        return Err(EvalError::Contract("random baseline needs n >= 1 and |V0| >= 2".into()));
    }
    let p = 1.0 / v0_size as f64;
    Ok((p.powi(n as i32), 1.0 - p))
}

/// Identifies an experiment cell; trials are only aggregated within one.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub pattern: String,
    pub n: usize,
    pub repetitions: usize,
    /// Sorted defense labels joined with `+`, or `none`.
    pub defenses: String,
    pub method: String,
    pub v0_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub cell: CellKey,
    pub trial: usize,
    pub canary: CanarySpec,
    pub reconstructed: Vec<String>,
    pub exact_match: bool,
    pub hdt: f64,
    pub seed: u64,
    pub final_loss: f64,
    pub ties: Vec<usize>,
    /// Parameter hash of the attacked model, before and after the attack.
    pub parameter_hash_before: String,
    pub parameter_hash_after: String,
    pub intent_accuracy: f64,
    pub tag_accuracy: f64,
    pub stopped_epoch: usize,
    /// Wall-clock seconds; kept out of summaries so those stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_secs: Option<f64>,
}

impl TrialReport {
    /// Fills the metric fields from the truth and the guess.
    pub fn score(truth: &[String], guess: &[String]) -> Result<(bool, f64), EvalError> {
        let hdt = hamming_distance_per_token(truth, guess)?;
        Ok((hdt == 0.0, hdt))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub cell: CellKey,
    pub trials: Vec<TrialReport>,
    pub accuracy: f64,
    pub hdt: f64,
    /// Standard error of the mean HDT.
    pub hdt_stderr: f64,
    pub baseline_accuracy: f64,
    pub baseline_hdt: f64,
    pub mean_intent_accuracy: f64,
    pub mean_tag_accuracy: f64,
    pub config_hash: String,
}

pub fn aggregate_trials(reports: &[TrialReport], config_hash: &str) -> Result<ExperimentSummary, EvalError> {
    let first = reports
        .first()
        .ok_or_else(|| EvalError::Contract("no trials to aggregate".into()))?;
    if let Some(other) = reports.iter().find(|r| r.cell != first.cell) {
        return Err(EvalError::Contract(format!(
            "mixed configurations: {:?} and {:?}",
            first.cell, other.cell
        )));
    }
    let k = reports.len() as f64;
    let mean = |f: fn(&TrialReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    let hdt = mean(|r| r.hdt);
    let var = if reports.len() > 1 {
        reports.iter().map(|r| (r.hdt - hdt).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    let (baseline_accuracy, baseline_hdt) = random_baseline(first.cell.n, first.cell.v0_size)?;
    let mut trials = reports.to_vec();
    trials.iter_mut().for_each(|t| t.runtime_secs = None);
    Ok(ExperimentSummary {
        cell: first.cell.clone(),
        accuracy: reports.iter().filter(|r| r.exact_match).count() as f64 / k,
        hdt,
        hdt_stderr: (var / k).sqrt(),
        baseline_accuracy,
        baseline_hdt,
        mean_intent_accuracy: mean(|r| r.intent_accuracy),
        mean_tag_accuracy: mean(|r| r.tag_accuracy),
        config_hash: config_hash.to_string(),
        trials,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    pattern: &'a str,
    n: usize,
    #[serde(rename = "R")]
    repetitions: usize,
    defenses: &'a str,
    trial: usize,
    exact_match: bool,
    hdt: f64,
    seed: u64,
    method: &'a str,
}

/// One row per trial across all summaries.
pub fn write_csv<W: std::io::Write>(summaries: &[ExperimentSummary], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for s in summaries {
        for t in &s.trials {
            w.serialize(CsvRow {
                pattern: &s.cell.pattern,
                n: s.cell.n,
                repetitions: s.cell.repetitions,
                defenses: &s.cell.defenses,
                trial: t.trial,
                exact_match: t.exact_match,
                hdt: t.hdt,
                seed: t.seed,
                method: &s.cell.method,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_json(path: impl AsRef<Path>, summary: &ExperimentSummary) -> Result<(), EvalError> {
    let mut bytes = serde_json::to_vec_pretty(summary)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}
