//! Forward pass of the tagger on a [`Tape`]: embeddings (optionally with a
//! char-CNN), two BiLSTM layers, an intent head and CRF emissions.

use rand::Rng as _;

use super::{ModelConfig, ModelError, NluModel, ParamVars};
use crate::numerics::rng::Rng;
use crate::numerics::{Tape, Tensor, Var};

/// What occupies one input position.
#[derive(Clone, Copy, Debug)]
pub enum InputSlot {
    /// A vocabulary index; looked up directly.
    Token(usize),
    /// Distribution over the candidate tokens; the input is the expected
    /// embedding (and expected char-CNN vector).
    Mixture(Var),
    /// A free word vector of width `embedding_dim`; the char-CNN part, if
    /// any, is the uniform average over the candidates.
    Free(Var),
}

/// Graph handles produced by [`NluModel::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    pub intent_logits: Var,
    /// `[len, tag_count]`
    pub emissions: Var,
}

/// Graph handles of the joint loss.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub intent: Var,
    pub crf: Var,
    pub total: Var,
}

/// Inverted dropout with a fresh mask; identity when `rng` is `None`.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut Rng>) -> Var {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..tape.value(x).len())
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect();
            let m = tape.constant(Tensor::vector(mask));
            tape.mul(x, m)
        }
        _ => x,
    }
}

/// Convolution of width `char_conv_width` over the token's character
/// embeddings, max-pooled over positions.
pub fn char_cnn_embed(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &ModelConfig,
    char_ids: &[usize],
) -> Result<Var, ModelError> {
    let [emb, kernel, bias] = vars
        .char_cnn
        .ok_or_else(|| ModelError::Config("character embeddings are disabled".into()))?;
    if char_ids.is_empty() {
        return Err(ModelError::Contract("token has no characters".into()));
    }
    let seq = tape.gather_rows(emb, char_ids);
    Ok(tape.conv_max_pool(seq, kernel, bias, config.char_conv_width))
}

/// One LSTM direction; returns hidden states in input order.
fn lstm_direction(
    tape: &mut Tape,
    inputs: &[Var],
    weight: Var,
    bias: Var,
    hidden: usize,
    reverse: bool,
) -> Vec<Var> {
    let mut h = tape.constant(Tensor::zeros(&[hidden]));
    let mut c = tape.constant(Tensor::zeros(&[hidden]));
    let mut out = vec![h; inputs.len()];
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for t in order {
        let xh = tape.concat(&[inputs[t], h]);
        let pre = tape.matvec(weight, xh);
        let gates = tape.add(pre, bias);
        let i = tape.slice(gates, 0, hidden);
        let f = tape.slice(gates, hidden, hidden);
        let g = tape.slice(gates, 2 * hidden, hidden);
        let o = tape.slice(gates, 3 * hidden, hidden);
        let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
        let keep = tape.mul(f, c);
        let write = tape.mul(i, g);
        c = tape.add(keep, write);
        let squashed = tape.tanh(c);
        h = tape.mul(o, squashed);
        out[t] = h;
    }
    out
}

/// Output of the stacked BiLSTM.
#[derive(Clone, Debug)]
pub struct BiLstmOutput {
    /// Concatenated `[forward; backward]` states of the top layer per position.
    pub states: Vec<Var>,
    pub last_forward: Var,
    pub first_backward: Var,
}

/// Two BiLSTM layers; inter-layer dropout only when `rng` is given.
pub fn bilstm_forward(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &ModelConfig,
    inputs: &[Var],
    mut rng: Option<&mut Rng>,
) -> Result<BiLstmOutput, ModelError> {
    if inputs.is_empty() {
        return Err(ModelError::Contract("empty input sequence".into()));
    }
    let h = config.hidden_dim;
    let mut xs = inputs.to_vec();
    let mut last = None;
    for (li, [(fw, fb), (bw, bb)]) in vars.layers.iter().enumerate() {
        if li > 0 {
            xs = xs
                .into_iter()
                .map(|x| dropout(tape, x, config.dropout_interlayer, rng.as_deref_mut()))
                .collect();
        }
        let fwd = lstm_direction(tape, &xs, *fw, *fb, h, false);
        let bwd = lstm_direction(tape, &xs, *bw, *bb, h, true);
        xs = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| tape.concat(&[*f, *b]))
            .collect();
        last = Some((fwd[fwd.len() - 1], bwd[0]));
    }
    let (last_forward, first_backward) = last.expect("at least one layer");
    Ok(BiLstmOutput {
        states: xs,
        last_forward,
        first_backward,
    })
}

impl NluModel {
    fn char_rep_of_token(&self, tape: &mut Tape, vars: &ParamVars, token: usize) -> Result<Var, ModelError> {
        let ids = self.chars.encode(self.vocab.token(token));
        char_cnn_embed(tape, vars, &self.config, &ids)
    }

    /// Input vectors for every position.
    ///
    /// `candidates` lists the vocabulary rows that [`InputSlot::Mixture`]
    /// weights refer to; it may be empty when every slot is a token.
    pub fn embed_tokens(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        slots: &[InputSlot],
        candidates: &[usize],
        mut rng: Option<&mut Rng>,
    ) -> Result<Vec<Var>, ModelError> {
        let chars_on = self.config.char_embeddings_enabled;
        let needs_candidates = slots.iter().any(|s| !matches!(s, InputSlot::Token(_)));
        if needs_candidates && candidates.is_empty() {
            return Err(ModelError::Contract("relaxed input without candidates".into()));
        }
        if let Some(&bad) = candidates.iter().find(|&&c| c >= self.vocab.len()) {
            return Err(ModelError::UnknownToken(format!("index {bad}")));
        }
        let mut cand_rows = None;
        let mut cand_chars: Option<Var> = None;
        let mut out = Vec::with_capacity(slots.len());
        for slot in slots {
            let (word, chars) = match *slot {
                InputSlot::Token(i) => {
                    if i >= self.vocab.len() {
                        return Err(ModelError::UnknownToken(format!("index {i}")));
                    }
                    let w = tape.row(vars.word, i);
                    let c = if chars_on {
                        Some(self.char_rep_of_token(tape, vars, i)?)
                    } else {
                        None
                    };
                    (w, c)
                }
                InputSlot::Mixture(weights) => {
                    if tape.value(weights).len() != candidates.len() {
                        return Err(ModelError::Contract(format!(
                            "mixture over {} weights but {} candidates",
                            tape.value(weights).len(),
                            candidates.len()
                        )));
                    }
                    let rows = *cand_rows.get_or_insert_with(|| tape.gather_rows(vars.word, candidates));
                    let w = tape.vecmat(weights, rows);
                    let c = if chars_on {
                        let table = match cand_chars {
                            Some(t) => t,
                            None => {
                                let t = self.candidate_char_table(tape, vars, candidates)?;
                                cand_chars = Some(t);
                                t
                            }
                        };
                        Some(tape.vecmat(weights, table))
                    } else {
                        None
                    };
                    (w, c)
                }
                InputSlot::Free(vector) => {
                    if tape.value(vector).len() != self.config.embedding_dim {
                        return Err(ModelError::Contract("free vector has wrong width".into()));
                    }
                    let c = if chars_on {
                        let table = match cand_chars {
                            Some(t) => t,
                            None => {
                                let t = self.candidate_char_table(tape, vars, candidates)?;
                                cand_chars = Some(t);
                                t
                            }
                        };
                        let n = candidates.len();
                        let uniform = tape.constant(Tensor::vector(vec![1.0 / n as f64; n]));
                        Some(tape.vecmat(uniform, table))
                    } else {
                        None
                    };
                    (vector, c)
                }
            };
            let x = match chars {
                Some(c) => tape.concat(&[word, c]),
                None => word,
            };
            out.push(dropout(tape, x, self.config.dropout_embed, rng.as_deref_mut()));
        }
        Ok(out)
    }

    fn candidate_char_table(&self, tape: &mut Tape, vars: &ParamVars, candidates: &[usize]) -> Result<Var, ModelError> {
        let reps = candidates
            .iter()
            .map(|&c| self.char_rep_of_token(tape, vars, c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(tape.stack_rows(&reps))
    }

    /// Intent logits and per-position emission scores.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        slots: &[InputSlot],
        candidates: &[usize],
        mut rng: Option<&mut Rng>,
    ) -> Result<Forward, ModelError> {
        let inputs = self.embed_tokens(tape, vars, slots, candidates, rng.as_deref_mut())?;
        let enc = bilstm_forward(tape, vars, &self.config, &inputs, rng)?;
        let summary = tape.concat(&[enc.last_forward, enc.first_backward]);
        let il = tape.matvec(vars.intent_weight, summary);
        let intent_logits = tape.add(il, vars.intent_bias);
        let rows: Vec<Var> = enc
            .states
            .iter()
            .map(|&s| {
                let e = tape.matvec(vars.emission_weight, s);
                tape.add(e, vars.emission_bias)
            })
            .collect();
        let emissions = tape.stack_rows(&rows);
        Ok(Forward {
            intent_logits,
            emissions,
        })
    }

    /// Intent cross-entropy plus CRF negative log-likelihood.
    pub fn loss(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        forward: &Forward,
        intent: usize,
        tags: &[usize],
    ) -> Result<LossVars, ModelError> {
        if intent >= self.config.intent_count {
            return Err(ModelError::LabelOutOfRange {
                label: intent,
                count: self.config.intent_count,
            });
        }
        let ic = tape.cross_entropy(forward.intent_logits, intent);
        let (value, d_emit, d_trans) = {
            let crf = super::CrfScores::new(
                tape.value(forward.emissions).data(),
                tape.value(vars.transitions).data(),
                self.config.tag_count,
            )?;
            crf.nll_with_grad(tags)?
        };
        let crf = tape.custom_scalar(
            value,
            vec![(forward.emissions, d_emit), (vars.transitions, d_trans)],
        );
        let total = tape.sum(&[ic, crf]);
        Ok(LossVars {
            intent: ic,
            crf,
            total,
        })
    }

    /// Forward pass plus loss in one call.
    pub fn model_loss(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        slots: &[InputSlot],
        candidates: &[usize],
        intent: usize,
        tags: &[usize],
        rng: Option<&mut Rng>,
    ) -> Result<(Forward, LossVars), ModelError> {
        if slots.len() != tags.len() {
            return Err(ModelError::Contract(format!(
                "{} inputs but {} tags",
                slots.len(),
                tags.len()
            )));
        }
        let fwd = self.forward(tape, vars, slots, candidates, rng)?;
        let loss = self.loss(tape, vars, &fwd, intent, tags)?;
        Ok((fwd, loss))
    }
}
