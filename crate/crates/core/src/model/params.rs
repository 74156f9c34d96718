use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelConfig;
use crate::numerics::rng::Rng;
use crate::numerics::{Tape, Tensor, Var};

const INIT_RANGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharCnnParams {
    /// `[char vocab, char_emb_dim]`
    pub embeddings: Tensor,
    /// `[filters, width * char_emb_dim]`
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// One LSTM direction. Gate rows are ordered input, forget, candidate, output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// `[4 * hidden, input + hidden]`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLstmLayer {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

/// Every trainable tensor of the tagger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `[vocab, embedding_dim]`
    pub word_embeddings: Tensor,
    pub char_cnn: Option<CharCnnParams>,
    pub layers: Vec<BiLstmLayer>,
    pub intent_weight: Tensor,
    pub intent_bias: Tensor,
    pub emission_weight: Tensor,
    pub emission_bias: Tensor,
    /// `[tags + 2, tags + 2]` including start and stop states.
    pub transitions: Tensor,
}

fn uniform(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
        .collect();
    Tensor::matrix(rows, cols, data)
}

fn lstm(rng: &mut Rng, input: usize, hidden: usize) -> LstmParams {
    let mut bias = vec![0.0; 4 * hidden];
    bias[hidden..2 * hidden].fill(1.0);
    LstmParams {
        weight: uniform(rng, 4 * hidden, input + hidden),
        bias: Tensor::vector(bias),
    }
}

impl ModelParams {
    /// Uniform(-0.1, 0.1) weights, zero biases, forget-gate bias 1.
    pub fn init(config: &ModelConfig, vocab_size: usize, char_vocab_size: usize, rng: &mut Rng) -> Self {
        let h = config.hidden_dim;
        let word_embeddings = uniform(rng, vocab_size, config.embedding_dim);
        let char_cnn = config.char_embeddings_enabled.then(|| CharCnnParams {
            embeddings: uniform(rng, char_vocab_size, config.char_emb_dim),
            kernel: uniform(
                rng,
                config.char_filter_count,
                config.char_conv_width * config.char_emb_dim,
            ),
            bias: Tensor::zeros(&[config.char_filter_count]),
        });
        let mut layers = Vec::with_capacity(config.num_bilstm_layers);
        let mut input = config.input_dim();
        for _ in 0..config.num_bilstm_layers {
            layers.push(BiLstmLayer {
                forward: lstm(rng, input, h),
                backward: lstm(rng, input, h),
            });
            input = 2 * h;
        }
        let k = config.tag_count;
        Self {
            word_embeddings,
            char_cnn,
            layers,
            intent_weight: uniform(rng, config.intent_count, 2 * h),
            intent_bias: Tensor::zeros(&[config.intent_count]),
            emission_weight: uniform(rng, k, 2 * h),
            emission_bias: Tensor::zeros(&[k]),
            transitions: uniform(rng, k + 2, k + 2),
        }
    }

    /// Tensors with stable names, in a fixed order shared with [`Self::tensors_mut`].
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("word_embeddings".to_string(), &self.word_embeddings)];
        if let Some(c) = &self.char_cnn {
            out.push(("char.embeddings".into(), &c.embeddings));
            out.push(("char.kernel".into(), &c.kernel));
            out.push(("char.bias".into(), &c.bias));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            for (dir, p) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                out.push((format!("lstm{i}.{dir}.weight"), &p.weight));
                out.push((format!("lstm{i}.{dir}.bias"), &p.bias));
            }
        }
        out.push(("intent.weight".into(), &self.intent_weight));
        out.push(("intent.bias".into(), &self.intent_bias));
        out.push(("emission.weight".into(), &self.emission_weight));
        out.push(("emission.bias".into(), &self.emission_bias));
        out.push(("crf.transitions".into(), &self.transitions));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.word_embeddings];
        if let Some(c) = &mut self.char_cnn {
            out.push(&mut c.embeddings);
            out.push(&mut c.kernel);
            out.push(&mut c.bias);
        }
        for layer in &mut self.layers {
            for p in [&mut layer.forward, &mut layer.backward] {
                out.push(&mut p.weight);
                out.push(&mut p.bias);
            }
        }
        out.push(&mut self.intent_weight);
        out.push(&mut self.intent_bias);
        out.push(&mut self.emission_weight);
        out.push(&mut self.emission_bias);
        out.push(&mut self.transitions);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Hex SHA-256 over names, shapes and little-endian values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for (name, t) in self.named_tensors() {
            buf.clear();
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            t.write_le(&mut buf);
            h.update(&buf);
        }
        hex::encode(h.finalize())
    }

    /// Puts every tensor on the tape, as parameters or as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let word = leaf(&self.word_embeddings);
        let char_cnn = self
            .char_cnn
            .as_ref()
            .map(|c| [leaf(&c.embeddings), leaf(&c.kernel), leaf(&c.bias)]);
        let layers = self
            .layers
            .iter()
            .map(|l| {
                [
                    (leaf(&l.forward.weight), leaf(&l.forward.bias)),
                    (leaf(&l.backward.weight), leaf(&l.backward.bias)),
                ]
            })
            .collect();
        ParamVars {
            word,
            char_cnn,
            layers,
            intent_weight: leaf(&self.intent_weight),
            intent_bias: leaf(&self.intent_bias),
            emission_weight: leaf(&self.emission_weight),
            emission_bias: leaf(&self.emission_bias),
            transitions: leaf(&self.transitions),
        }
    }
}

/// Tape handles for a registered [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub word: Var,
    /// embeddings, kernel, bias
    pub char_cnn: Option<[Var; 3]>,
    /// per layer: (weight, bias) forward then backward
    pub layers: Vec<[(Var, Var); 2]>,
    pub intent_weight: Var,
    pub intent_bias: Var,
    pub emission_weight: Var,
    pub emission_bias: Var,
    pub transitions: Var,
}

impl ParamVars {
    /// Same order as [`ModelParams::tensors_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.word];
        if let Some(c) = self.char_cnn {
            out.extend(c);
        }
        for l in &self.layers {
            for (w, b) in l {
                out.push(*w);
                out.push(*b);
            }
        }
        out.extend([
            self.intent_weight,
            self.intent_bias,
            self.emission_weight,
            self.emission_bias,
            self.transitions,
        ]);
        out
    }
}
