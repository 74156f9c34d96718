//! Canary extraction: recover a canary's secret tokens from a trained model
//! by optimizing per-position logits over candidate tokens. Each logit row
//! goes through a temperature-annealed softmax and the resulting weights mix
//! the candidates' embeddings; only the logits are trained.

mod continuous;

pub use continuous::{continuous_baseline_attack, continuous_baseline_from};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CanarySpec, DataError, ReducedVocabulary};
use crate::model::{InputSlot, ModelError, NluModel, ParamVars};
use crate::numerics::rng::{rng_for, Purpose};
use crate::numerics::{argmax, softmax_with_temperature, AdamState, NumericsError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid attack config: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite attack loss {loss} at epoch {epoch}")]
    NonFinite { epoch: usize, loss: f64, logits: Tensor },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogitInit {
    #[default]
    Zeros,
    /// i.i.d. normal with variance 0.01.
    Gaussian,
}

impl std::str::FromStr for LogitInit {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zeros" => Ok(Self::Zeros),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(AttackError::Config(format!("unknown init scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub attack_epochs: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub t0: f64,
    pub t_decay: f64,
    pub init: LogitInit,
    pub seed: u64,
    /// Optimize logits over the whole vocabulary instead of the reduced one.
    /// Decoding still picks the best candidate inside the reduced vocabulary.
    pub full_vocab: bool,
    /// Replace the intent the adversary assumes.
    pub intent_override: Option<String>,
    /// Replace the tag sequence the adversary assumes.
    pub tags_override: Option<Vec<String>>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            attack_epochs: 250,
            lr0: 6.5e-3,
            lr_decay: 0.995,
            t0: 0.1,
            t_decay: 0.997,
            init: LogitInit::Zeros,
            seed: 0,
            full_vocab: false,
            intent_override: None,
            tags_override: None,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.lr_decay) || !unit(self.t_decay) {
            return Err(AttackError::Config("decay rates must lie in (0, 1)".into()));
        }
        if !(self.t0 > 0.0) || !self.t0.is_finite() {
            return Err(AttackError::Config("initial temperature must be positive".into()));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(AttackError::Config("initial learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Temperature used at epoch `t`, closed form.
    pub fn temperature_at(&self, t: usize) -> f64 {
        self.t0 * self.t_decay.powi(t as i32)
    }

    /// Learning rate used at epoch `t`, closed form.
    pub fn lr_at(&self, t: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(t as i32)
    }
}

/// What the adversary knows about a canary: everything but the secret.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackTarget {
    pub prefix: Vec<String>,
    pub n: usize,
    pub intent: String,
    pub tags: Vec<String>,
}

impl AttackTarget {
    pub fn from_spec(spec: &CanarySpec) -> Self {
        Self {
            prefix: spec.prefix.clone(),
            n: spec.n(),
            intent: spec.intent.clone(),
            tags: spec.tags.clone(),
        }
    }
}

/// Target mapped to model indices.
#[derive(Clone, Debug)]
pub struct EncodedTarget {
    pub prefix: Vec<usize>,
    pub n: usize,
    pub intent: usize,
    pub tags: Vec<usize>,
}

pub fn encode_target(model: &NluModel, target: &AttackTarget, config: &AttackConfig) -> Result<EncodedTarget, AttackError> {
    if target.n == 0 {
        return Err(AttackError::Config("canary needs at least one unknown token".into()));
    }
    let intent = config.intent_override.as_ref().unwrap_or(&target.intent);
    let tags = config.tags_override.as_ref().unwrap_or(&target.tags);
    if tags.len() != target.prefix.len() + target.n {
        return Err(AttackError::Config(format!(
            "{} tags for {} prefix and {} unknown tokens",
            tags.len(),
            target.prefix.len(),
            target.n
        )));
    }
    let prefix = model
        .vocab
        .encode_strict(&target.prefix)
        .map_err(AttackError::Data)?;
    Ok(EncodedTarget {
        prefix,
        n: target.n,
        intent: model
            .labels
            .intent_index(intent)
            .ok_or_else(|| ModelError::UnknownLabel(intent.clone()))?,
        tags: model.encode_tags(tags)?,
    })
}

/// Initial `n x k` logit matrix.
pub fn init_logits(n: usize, k: usize, scheme: LogitInit, seed: u64) -> Result<Tensor, AttackError> {
    if n == 0 {
        return Err(AttackError::Config("n must be at least 1".into()));
    }
    if k < 2 {
        return Err(AttackError::Config("reduced vocabulary needs at least two tokens".into()));
    }
    let data = match scheme {
        LogitInit::Zeros => vec![0.0; n * k],
        LogitInit::Gaussian => {
            let normal = Normal::new(0.0, 0.1).expect("valid normal");
            let mut rng = rng_for(seed, Purpose::Attack);
            (0..n * k).map(|_| normal.sample(&mut rng)).collect()
        }
    };
    Ok(Tensor::matrix(n, k, data))
}

/// Relaxed embedding: softmax(z / T) weighted sum of the rows of `w`.
pub fn relax_embed(z: &[f64], temperature: f64, w: &Tensor) -> Result<Vec<f64>, AttackError> {
    if w.rows() != z.len() {
        return Err(AttackError::Contract(format!("{} logits for {} embedding rows", z.len(), w.rows())));
    }
    let a = crate::numerics::softmax_with_temperature(z, temperature)?;
    let mut out = vec![0.0; w.cols()];
    for (ai, row) in a.iter().zip(w.data().chunks(w.cols())) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += ai * v;
        }
    }
    Ok(out)
}

/// Logits, temperature, optimizer state and epoch of a running attack.
#[derive(Clone, Debug)]
pub struct AttackState {
    pub logits: Tensor,
    pub temperature: f64,
    pub lr: f64,
    pub adam: AdamState,
    pub epoch: usize,
}

impl AttackState {
    pub fn new(logits: Tensor, config: &AttackConfig) -> Self {
        let adam = AdamState::new([&logits], config.lr0);
        Self {
            logits,
            temperature: config.t0,
            lr: config.lr0,
            adam,
            epoch: 0,
        }
    }
}

/// Builds the attack loss on `tape`, whose model parameters must already be
/// registered frozen. Returns the loss and the logit variable.
pub fn attack_loss_on_tape(
    model: &NluModel,
    tape: &mut Tape,
    vars: &ParamVars,
    target: &EncodedTarget,
    candidates: &[usize],
    logits: &Tensor,
    temperature: f64,
) -> Result<(Var, Var), AttackError> {
    if logits.rows() != target.n || logits.cols() != candidates.len() {
        return Err(AttackError::Contract(format!(
            "logits are {:?}, expected {} x {}",
            logits.shape(),
            target.n,
            candidates.len()
        )));
    }
    let z = tape.param(logits.clone());
    if tape.registered_params() != [z] {
        return Err(AttackError::Contract("model parameters are registered for gradients".into()));
    }
    let mut slots: Vec<InputSlot> = target.prefix.iter().map(|&t| InputSlot::Token(t)).collect();
    for i in 0..target.n {
        let row = tape.row(z, i);
        let a = tape.softmax(row, temperature);
        slots.push(InputSlot::Mixture(a));
    }
    let (_, loss) = model.model_loss(tape, vars, &slots, candidates, target.intent, &target.tags, None)?;
    Ok((loss.total, z))
}

/// Attack loss at fixed logits and temperature, with its gradient w.r.t.
/// the logits. `candidates` are the vocabulary rows the logit columns map to.
pub fn attack_loss_and_grad(
    model: &NluModel,
    target: &EncodedTarget,
    candidates: &[usize],
    logits: &Tensor,
    temperature: f64,
) -> Result<(f64, Tensor), AttackError> {
    let mut tape = Tape::new();
    let vars = model.params.register(&mut tape, false);
    let (loss, z) = attack_loss_on_tape(model, &mut tape, &vars, target, candidates, logits, temperature)?;
    let grads = tape.backward(loss);
    Ok((tape.scalar(loss), grads.wrt(z)))
}

/// One optimization step: loss at the current logits, then an Adam update
/// with the current learning rate, then both schedules advance.
pub fn attack_step(
    model: &NluModel,
    target: &EncodedTarget,
    candidates: &[usize],
    state: &mut AttackState,
    config: &AttackConfig,
) -> Result<f64, AttackError> {
    let (loss, grad) = attack_loss_and_grad(model, target, candidates, &state.logits, state.temperature)?;
    if !loss.is_finite() {
        return Err(AttackError::NonFinite {
            epoch: state.epoch,
            loss,
            logits: state.logits.clone(),
        });
    }
    state.adam.lr = state.lr;
    state.adam.step(&mut [&mut state.logits], &[grad])?;
    state.epoch += 1;
    state.temperature *= config.t_decay;
    state.lr *= config.lr_decay;
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub tokens: Vec<String>,
    /// One row per unknown: final softmax weights over the logit columns, or
    /// squared distances to each reduced-vocabulary embedding for the
    /// continuous baseline.
    pub activations: Vec<Vec<f64>>,
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
    /// Unknown positions whose arg-max was tied.
    pub ties: Vec<usize>,
    /// Absent for the continuous baseline, which has no temperature.
    pub final_temperature: Option<f64>,
    pub final_lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Position inside `decode_cols` of the winning column, per row.
    pub choices: Vec<usize>,
    pub activations: Vec<Vec<f64>>,
    pub ties: Vec<usize>,
}

/// Arg-max of each row's softmax restricted to `decode_cols`; ties go to the
/// lowest index and are recorded.
pub fn decode_logits(logits: &Tensor, temperature: f64, decode_cols: &[usize]) -> Result<Decoded, AttackError> {
    let mut out = Decoded {
        choices: Vec::with_capacity(logits.rows()),
        activations: Vec::with_capacity(logits.rows()),
        ties: Vec::new(),
    };
    for i in 0..logits.rows() {
        let a = softmax_with_temperature(logits.row(i), temperature)?;
        let restricted: Vec<f64> = decode_cols.iter().map(|&c| a[c]).collect();
        let (best, tie) = argmax(&restricted);
        if tie {
            out.ties.push(i);
        }
        out.choices.push(best);
        out.activations.push(a);
    }
    Ok(out)
}

/// Column indices for the attack: the reduced vocabulary, or the whole
/// vocabulary in full mode. Also returns where the reduced tokens sit.
fn columns(model: &NluModel, v0: &ReducedVocabulary, config: &AttackConfig) -> (Vec<usize>, Vec<usize>) {
    if config.full_vocab {
        let all: Vec<usize> = (1..model.vocab.len()).collect();
        let pos = v0.indices().iter().map(|&i| i - 1).collect();
        (all, pos)
    } else {
        (v0.indices().to_vec(), (0..v0.len()).collect())
    }
}

pub fn run_attack(
    model: &NluModel,
    target: &AttackTarget,
    v0: &ReducedVocabulary,
    config: &AttackConfig,
) -> Result<ReconstructionResult, AttackError> {
    config.validate()?;
    if v0.indices().iter().any(|&i| i == 0 || i >= model.vocab.len()) {
        return Err(AttackError::Config("reduced vocabulary is not inside the model vocabulary".into()));
    }
    let enc = encode_target(model, target, config)?;
    let (cands, decode_cols) = columns(model, v0, config);
    let z0 = init_logits(enc.n, cands.len(), config.init, config.seed)?;
    let mut state = AttackState::new(z0, config);
    let mut trace = Vec::with_capacity(config.attack_epochs);
    for _ in 0..config.attack_epochs {
        trace.push(attack_step(model, &enc, &cands, &mut state, config)?);
    }
    let (final_loss, _) = attack_loss_and_grad(model, &enc, &cands, &state.logits, state.temperature)?;
    if !final_loss.is_finite() {
        return Err(AttackError::NonFinite {
            epoch: state.epoch,
            loss: final_loss,
            logits: state.logits,
        });
    }
    let decoded = decode_logits(&state.logits, state.temperature, &decode_cols)?;
    for &i in &decoded.ties {
        log::info!("tie at unknown position {i}; picked lowest candidate index");
    }
    let tokens = decoded
        .choices
        .iter()
        .map(|&c| model.vocab.token(v0.indices()[c]).to_string())
        .collect();
    let (activations, ties) = (decoded.activations, decoded.ties);
    Ok(ReconstructionResult {
        tokens,
        activations,
        final_loss,
        loss_trace: trace,
        ties,
        final_temperature: Some(state.temperature),
        final_lr: state.lr,
    })
}
