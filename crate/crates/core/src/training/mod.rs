//! Target-model training with optional dropout and early stopping,
//! evaluation, and the checkpoint file format.

mod checkpoint;
mod early_stopping;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, inspect_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointSummary};
pub use early_stopping::{EarlyStopping, Observation};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Corpus, LabeledExample, Vocabulary, COLORS, DIGIT_NUMERALS, DIGIT_WORDS};
use crate::model::{EncodedExample, InputSlot, ModelConfig, ModelError, NluModel};
use crate::numerics::rng::{rng_for, Purpose};
use crate::numerics::{AdamState, NumericsError, Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("loss diverged at epoch {epoch} (last finite epoch {last_finite_epoch:?}, train loss {last_train_loss:?})")]
    Diverged {
        epoch: usize,
        last_finite_epoch: Option<usize>,
        last_train_loss: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub early_stopping_enabled: bool,
    pub patience: usize,
    pub dropout_enabled: bool,
    /// Examples per Adam step; gradients are averaged within a batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 60,
            learning_rate: 1e-3,
            early_stopping_enabled: false,
            patience: 20,
            dropout_enabled: false,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_loss: Vec<f64>,
    /// Empty when the corpus has no validation split.
    pub val_loss: Vec<f64>,
    /// Last epoch that ran (1-based).
    pub stopped_epoch: usize,
    /// Epoch whose parameters were returned (1-based).
    pub best_epoch: usize,
    pub intent_accuracy: f64,
    pub tag_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub intent: f64,
    pub tags: f64,
}

/// Vocabulary over the corpus plus every candidate secret token, so any
/// reduced vocabulary an attacker picks is a subset of it.
pub fn corpus_vocabulary(corpus: &Corpus) -> Vocabulary {
    let extra = DIGIT_WORDS.iter().chain(&DIGIT_NUMERALS).chain(&COLORS).copied();
    Vocabulary::build(corpus.all(), extra)
}

/// Fresh model sized for `corpus`, initialised from `seed`.
pub fn init_model(corpus: &Corpus, config: &ModelConfig, seed: u64) -> Result<NluModel, ModelError> {
    let mut rng = rng_for(seed, Purpose::Init);
    NluModel::new(config.clone(), corpus_vocabulary(corpus), corpus.label_sets(), &mut rng)
}

/// Initialises a model from `train_config.seed` and trains it.
pub fn train(corpus: &Corpus, model_config: &ModelConfig, train_config: &TrainConfig) -> Result<(NluModel, TrainReport), TrainError> {
    let model = init_model(corpus, model_config, train_config.seed)?;
    train_model(model, corpus, train_config)
}

/// Trains an existing model (e.g. one with pretrained embeddings).
pub fn train_model(mut model: NluModel, corpus: &Corpus, config: &TrainConfig) -> Result<(NluModel, TrainReport), TrainError> {
    config.validate()?;
    if corpus.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if config.early_stopping_enabled && corpus.val.is_empty() {
        return Err(TrainError::Config("early stopping needs a validation split".into()));
    }
    let train: Vec<EncodedExample> = corpus.train.iter().map(|e| model.encode(e)).collect::<Result<_, _>>()?;
    let val: Vec<EncodedExample> = corpus.val.iter().map(|e| model.encode(e)).collect::<Result<_, _>>()?;

    let mut shuffle_rng = rng_for(config.seed, Purpose::Shuffle);
    let mut dropout_rng = rng_for(config.seed, Purpose::Dropout);
    let mut adam = AdamState::new(model.params.tensors(), config.learning_rate);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: Option<(usize, crate::model::ModelParams)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut stopped_epoch = config.max_epochs;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &i in batch {
                let rng = if config.dropout_enabled { Some(&mut dropout_rng) } else { None };
                let (loss, grads) = loss_and_grads(&model, &train[i], rng)?;
                if !loss.is_finite() {
                    return Err(diverged(epoch, &train_losses));
                }
                total += loss;
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (dst, g) in a.iter_mut().zip(&grads) {
                            for (d, v) in dst.data_mut().iter_mut().zip(g.data()) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            if batch.len() > 1 {
                let k = batch.len() as f64;
                for g in &mut grads {
                    g.data_mut().iter_mut().for_each(|v| *v /= k);
                }
            }
            adam.step(&mut model.params.tensors_mut(), &grads)?;
        }
        if !model.params.is_finite() {
            return Err(diverged(epoch, &train_losses));
        }
        let train_loss = total / train.len() as f64;
        train_losses.push(train_loss);

        if !val.is_empty() {
            let v = mean_loss(&model, &val)?;
            if !v.is_finite() {
                return Err(diverged(epoch, &train_losses));
            }
            val_losses.push(v);
            log::debug!("epoch {epoch}: train {train_loss:.5} val {v:.5}");
            if config.early_stopping_enabled {
                match stopper.observe(epoch, v) {
                    Observation::Improved => best = Some((epoch, model.params.clone())),
                    Observation::Stale => {}
                    Observation::Exhausted => {
                        stopped_epoch = epoch;
                        break;
                    }
                }
            }
        } else {
            log::debug!("epoch {epoch}: train {train_loss:.5}");
        }
    }

    let best_epoch = match best {
        Some((epoch, params)) => {
            model.params = params;
            epoch
        }
        None => stopped_epoch,
    };
    let eval_split = if corpus.val.is_empty() { &corpus.train } else { &corpus.val };
    let acc = evaluate_model(&model, eval_split)?;
    let report = TrainReport {
        config: config.clone(),
        train_loss: train_losses,
        val_loss: val_losses,
        stopped_epoch,
        best_epoch,
        intent_accuracy: acc.intent,
        tag_accuracy: acc.tags,
    };
    Ok((model, report))
}

fn diverged(epoch: usize, train_losses: &[f64]) -> TrainError {
    TrainError::Diverged {
        epoch,
        last_finite_epoch: if train_losses.is_empty() { None } else { Some(train_losses.len()) },
        last_train_loss: train_losses.last().copied(),
    }
}

/// Total loss and its gradient w.r.t. every parameter tensor.
pub fn loss_and_grads(
    model: &NluModel,
    ex: &EncodedExample,
    rng: Option<&mut crate::numerics::rng::Rng>,
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let mut tape = Tape::new();
    let vars = model.params.register(&mut tape, true);
    let slots: Vec<InputSlot> = ex.tokens.iter().map(|&t| InputSlot::Token(t)).collect();
    let (_, loss) = model.model_loss(&mut tape, &vars, &slots, &[], ex.intent, &ex.tags, rng)?;
    let value = tape.scalar(loss.total);
    let grads = tape.backward(loss.total);
    Ok((value, vars.all().into_iter().map(|v| grads.wrt(v)).collect()))
}

/// Mean total loss without dropout.
pub fn mean_loss(model: &NluModel, examples: &[EncodedExample]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for ex in examples {
        total += model.output(ex)?.loss;
    }
    Ok(total / examples.len() as f64)
}

/// Intent arg-max accuracy and Viterbi per-tag accuracy.
pub fn evaluate_model(model: &NluModel, examples: &[LabeledExample]) -> Result<Accuracy, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::Contract("cannot evaluate an empty split".into()));
    }
    let (mut intent_hits, mut tag_hits, mut tag_total) = (0usize, 0usize, 0usize);
    for ex in examples {
        let enc = model.encode(ex)?;
        let pred = model.predict(&enc.tokens)?;
        intent_hits += usize::from(pred.intent == enc.intent);
        tag_hits += pred.tags.iter().zip(&enc.tags).filter(|(a, b)| a == b).count();
        tag_total += enc.tags.len();
    }
    Ok(Accuracy {
        intent: intent_hits as f64 / examples.len() as f64,
        tags: tag_hits as f64 / tag_total as f64,
    })
}

#[cfg(test)]
mod tests;
