//! Reproducible sweeps over canary pattern, length, repetitions and defense
//! combinations. Every trial's randomness is derived from the master seed and
//! the trial's coordinates, so adding cells never changes existing ones.

mod config;

pub use config::{CorpusSource, Defense, ExperimentConfig, Method, SCHEMA_VERSION};

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::attack::{continuous_baseline_attack, run_attack, AttackConfig, AttackError, AttackTarget};
use crate::data::{generate_canary_with, inject_canary, Corpus, DataError, Pattern, ReducedVocabulary};
use crate::eval::{aggregate_trials, write_csv, CellKey, EvalError, ExperimentSummary, TrialReport};
use crate::numerics::rng::{derive_seed, hash_seed, Purpose};
use crate::training::{train, CheckpointError, TrainError};

/// Environment variable that overrides the configured worker count.
pub const WORKERS_ENV: &str = "CANARY_AUDIT_WORKERS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One (pattern, n, R, defense set) combination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub pattern: Pattern,
    pub n: usize,
    pub repetitions: usize,
    pub defenses: Vec<Defense>,
}

impl Cell {
    pub fn defense_label(&self) -> String {
        config::defense_label(&self.defenses)
    }

    /// File-name friendly identifier.
    pub fn id(&self) -> String {
        format!("{}-n{}-R{}-{}", self.pattern, self.n, self.repetitions, self.defense_label())
    }

    pub fn key(&self, method: Method, v0_size: usize) -> CellKey {
        CellKey {
            pattern: self.pattern.to_string(),
            n: self.n,
            repetitions: self.repetitions,
            defenses: self.defense_label(),
            method: method.as_str().to_string(),
            v0_size,
        }
    }
}

/// hash(master seed, pattern, n, R, defense set, trial index).
pub fn trial_seed(master_seed: u64, cell: &Cell, trial: usize) -> u64 {
    hash_seed(&[
        &master_seed.to_le_bytes(),
        cell.pattern.as_str().as_bytes(),
        &(cell.n as u64).to_le_bytes(),
        &(cell.repetitions as u64).to_le_bytes(),
        cell.defense_label().as_bytes(),
        &(trial as u64).to_le_bytes(),
    ])
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialFailure {
    pub cell: String,
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Serialize)]
struct ManifestTrial {
    cell: String,
    trial: usize,
    seed: u64,
}

#[derive(Clone, Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    schema_version: u32,
    config_hash: &'a str,
    master_seed: u64,
    config: &'a ExperimentConfig,
    trials: Vec<ManifestTrial>,
    summaries: Vec<String>,
    failures: &'a [TrialFailure],
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub summaries: Vec<ExperimentSummary>,
    pub failures: Vec<TrialFailure>,
    pub trials_total: usize,
    /// Cells in which every trial failed.
    pub failed_cells: Vec<String>,
}

impl ExperimentOutcome {
    /// 0 when everything ran, 3 when every trial failed, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else if self.failures.len() == self.trials_total {
            3
        } else {
            2
        }
    }
}

struct Job {
    cell_index: usize,
    trial: usize,
}

enum Message {
    Done {
        cell_index: usize,
        trial: usize,
        reports: Vec<TrialReport>,
        checkpoint: Vec<u8>,
    },
    Failed(TrialFailure),
}

/// Creates a file that must not already exist.
fn create_new(path: &Path) -> Result<File, ExperimentError> {
    OpenOptions::new().write(true).create_new(true).open(path).map_err(io_err(path))
}

fn write_new(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let mut f = create_new(path)?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, ExperimentError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Runs one trial: canary, injection, training, then every attack method.
pub fn run_trial(
    config: &ExperimentConfig,
    base: &Corpus,
    cell: &Cell,
    trial: usize,
) -> Result<(Vec<TrialReport>, Vec<u8>), ExperimentError> {
    let started = Instant::now();
    let seed = trial_seed(config.master_seed, cell, trial);
    let spec = generate_canary_with(cell.pattern, cell.n, derive_seed(seed, Purpose::Canary), config.digit_format)?
        .with_repetitions(cell.repetitions);
    let corpus = inject_canary(base, &spec)?;

    let mut model_config = config.model.clone();
    let mut train_config = config.train.clone();
    model_config.char_embeddings_enabled |= cell.defenses.contains(&Defense::CharEmbeddings);
    train_config.dropout_enabled |= cell.defenses.contains(&Defense::Dropout);
    train_config.early_stopping_enabled |= cell.defenses.contains(&Defense::EarlyStopping);
    train_config.seed = seed;
    let (model, report) = train(&corpus, &model_config, &train_config)?;
    let checkpoint = crate::training::encode_checkpoint(
        &model,
        &serde_json::json!({ "trial_seed": seed, "train_report": report, "canary": spec }),
    );

    let v0 = match &config.v0 {
        Some(tokens) => ReducedVocabulary::from_tokens(&model.vocab, tokens)?,
        None => ReducedVocabulary::from_tokens(&model.vocab, cell.pattern.secret_tokens(config.digit_format))?,
    };
    let target = AttackTarget::from_spec(&spec);
    let attack_config = AttackConfig {
        seed: derive_seed(seed, Purpose::Attack),
        ..config.attack.clone()
    };
    let mut reports = Vec::new();
    for &method in &config.methods {
        let before = model.params.hash();
        let result = match method {
            Method::Discrete => run_attack(&model, &target, &v0, &attack_config)?,
            Method::Continuous => continuous_baseline_attack(&model, &target, &v0, &attack_config)?,
        };
        let after = model.params.hash();
        let (exact_match, hdt) = TrialReport::score(&spec.unknown, &result.tokens)?;
        reports.push(TrialReport {
            cell: cell.key(method, v0.len()),
            trial,
            canary: spec.clone(),
            reconstructed: result.tokens,
            exact_match,
            hdt,
            seed,
            final_loss: result.final_loss,
            ties: result.ties,
            parameter_hash_before: before,
            parameter_hash_after: after,
            intent_accuracy: report.intent_accuracy,
            tag_accuracy: report.tag_accuracy,
            stopped_epoch: report.stopped_epoch,
            runtime_secs: Some(started.elapsed().as_secs_f64()),
        });
    }
    Ok((reports, checkpoint))
}

/// Worker count: the environment override, else the config value, at least 1.
pub fn worker_count(config: &ExperimentConfig) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(config.workers)
        .max(1)
}

/// Runs the full grid, writing into `config.output_dir`:
///
/// - `trials/<cell>/trial-NNN-<method>.json` (or `trial-NNN-error.json`)
/// - `checkpoints/<cell>-trial-NNN.ckpt`
/// - `summaries/<cell>-<method>.json`
/// - `results.csv` and `manifest.json`
///
/// Existing files are never overwritten; rerun into a fresh directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    config.validate()?;
    let base = config.corpus.load()?;
    let cells = config.cells();
    let config_hash = config.hash();
    let out = &config.output_dir;
    let trials_dir = out.join("trials");
    let ckpt_dir = out.join("checkpoints");
    let summary_dir = out.join("summaries");
    for d in [&trials_dir, &ckpt_dir, &summary_dir] {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
    }
    for cell in &cells {
        let d = trials_dir.join(cell.id());
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    }

    let jobs: Vec<Job> = cells
        .iter()
        .enumerate()
        .flat_map(|(cell_index, _)| (0..config.trials).map(move |trial| Job { cell_index, trial }))
        .collect();
    let workers = worker_count(config).min(jobs.len().max(1));
    log::info!("{} cells x {} trials on {workers} worker(s)", cells.len(), config.trials);

    let mut results: BTreeMap<(usize, usize), Vec<TrialReport>> = BTreeMap::new();
    let mut failures = Vec::new();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Message>();
    std::thread::scope(|scope| -> Result<(), ExperimentError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, cells, base, next) = (&jobs, &cells, &base, &next);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let cell = &cells[job.cell_index];
                let msg = match run_trial(config, base, cell, job.trial) {
                    Ok((reports, checkpoint)) => Message::Done {
                        cell_index: job.cell_index,
                        trial: job.trial,
                        reports,
                        checkpoint,
                    },
                    Err(e) => Message::Failed(TrialFailure {
                        cell: cell.id(),
                        trial: job.trial,
                        seed: trial_seed(config.master_seed, cell, job.trial),
                        error: e.to_string(),
                    }),
                };
                if tx.send(msg).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Single writer: every file is created here, in completion order.
        for msg in rx {
            match msg {
                Message::Done {
                    cell_index,
                    trial,
                    reports,
                    checkpoint,
                } => {
                    let id = cells[cell_index].id();
                    write_new(&ckpt_dir.join(format!("{id}-trial-{trial:03}.ckpt")), &checkpoint)?;
                    for r in &reports {
                        let p = trials_dir.join(&id).join(format!("trial-{trial:03}-{}.json", r.cell.method));
                        write_new(&p, &json_bytes(r)?)?;
                    }
                    log::info!(
                        "{id} trial {trial}: {}",
                        reports
                            .iter()
                            .map(|r| format!("{} hdt {:.2}", r.cell.method, r.hdt))
                            .collect::<Vec<_>>()
                            .join(", ")
                    );
                    results.insert((cell_index, trial), reports);
                }
                Message::Failed(f) => {
                    log::warn!("{} trial {} failed: {}", f.cell, f.trial, f.error);
                    let p = trials_dir.join(&f.cell).join(format!("trial-{:03}-error.json", f.trial));
                    write_new(&p, &json_bytes(&f)?)?;
                    failures.push(f);
                }
            }
        }
        Ok(())
    })?;
    failures.sort_by(|a, b| (&a.cell, a.trial).cmp(&(&b.cell, b.trial)));

    let mut summaries = Vec::new();
    let mut failed_cells = Vec::new();
    let mut summary_files = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        let done: Vec<&Vec<TrialReport>> = results.range((ci, 0)..(ci + 1, 0)).map(|(_, v)| v).collect();
        if done.is_empty() {
            failed_cells.push(cell.id());
            continue;
        }
        for (mi, method) in config.methods.iter().enumerate() {
            let reports: Vec<TrialReport> = done.iter().map(|r| r[mi].clone()).collect();
            let summary = aggregate_trials(&reports, &config_hash)?;
            let name = format!("{}-{}.json", cell.id(), method.as_str());
            write_new(&summary_dir.join(&name), &json_bytes(&summary)?)?;
            summary_files.push(name);
            summaries.push(summary);
        }
    }
    let csv_path = out.join("results.csv");
    write_csv(&summaries, create_new(&csv_path)?)?;

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        schema_version: SCHEMA_VERSION,
        config_hash: &config_hash,
        master_seed: config.master_seed,
        config,
        trials: cells
            .iter()
            .flat_map(|c| {
                (0..config.trials).map(move |t| ManifestTrial {
                    cell: c.id(),
                    trial: t,
                    seed: trial_seed(config.master_seed, c, t),
                })
            })
            .collect(),
        summaries: summary_files,
        failures: &failures,
    };
    write_new(&out.join("manifest.json"), &json_bytes(&manifest)?)?;

    Ok(ExperimentOutcome {
        summaries,
        failures,
        trials_total: jobs.len(),
        failed_cells,
    })
}

#[cfg(test)]
mod tests;
