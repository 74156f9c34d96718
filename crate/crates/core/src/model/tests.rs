use super::*;
use crate::data::{LabelSets, Vocabulary};
use crate::numerics::rng::rng_from_seed;
use crate::numerics::{gradient_check, Tape, Tensor};

fn labels(intents: &[&str], tags: &[&str]) -> LabelSets {
    LabelSets {
        intents: intents.iter().map(|s| s.to_string()).collect(),
        tags: tags.iter().map(|s| s.to_string()).collect(),
    }
}

fn tiny(chars: bool, seed: u64) -> NluModel {
    let vocab = Vocabulary::build([], ["call", "one", "two", "three", "my", "pin"]);
    let config = ModelConfig {
        embedding_dim: 3,
        hidden_dim: 2,
        char_embeddings_enabled: chars,
        char_emb_dim: 2,
        char_filter_count: 3,
        ..Default::default()
    };
    NluModel::new(
        config,
        vocab,
        labels(&["A", "B"], &["B-x", "I-x", "O"]),
        &mut rng_from_seed(seed),
    )
    .unwrap()
}

fn ids(m: &NluModel, toks: &[&str]) -> Vec<usize> {
    toks.iter().map(|t| m.vocab.index(t).unwrap()).collect()
}

#[test]
fn token_lookup_is_embedding_row() {
    let m = tiny(false, 1);
    let call = m.vocab.index("call").unwrap();
    let mut tape = Tape::new();
    let vars = m.params.register(&mut tape, false);
    let xs = m
        .embed_tokens(&mut tape, &vars, &[InputSlot::Token(call)], &[], None)
        .unwrap();
    assert_eq!(tape.value(xs[0]).data(), m.params.word_embeddings.row(call));
}

#[test]
fn out_of_range_token_is_rejected() {
    let m = tiny(false, 1);
    let mut tape = Tape::new();
    let vars = m.params.register(&mut tape, false);
    let r = m.embed_tokens(&mut tape, &vars, &[InputSlot::Token(999)], &[], None);
    assert!(matches!(r, Err(ModelError::UnknownToken(_))));
}

#[test]
fn uniform_mixture_is_mean_of_rows() {
    let m = tiny(false, 2);
    let cands = ids(&m, &["one", "two"]);
    let mut tape = Tape::new();
    let vars = m.params.register(&mut tape, false);
    let a = tape.constant(Tensor::vector(vec![0.5, 0.5]));
    let xs = m
        .embed_tokens(&mut tape, &vars, &[InputSlot::Mixture(a)], &cands, None)
        .unwrap();
    let (r1, r2) = (
        m.params.word_embeddings.row(cands[0]),
        m.params.word_embeddings.row(cands[1]),
    );
    for (k, v) in tape.value(xs[0]).data().iter().enumerate() {
        assert!((v - 0.5 * (r1[k] + r2[k])).abs() < 1e-15);
    }
}

#[test]
fn one_hot_mixture_is_bit_identical_to_lookup() {
    for chars in [false, true] {
        let m = tiny(chars, 3);
        let cands = ids(&m, &["one", "two", "three"]);
        let prefix = ids(&m, &["my", "pin"]);
        let tags = m.encode_tags(&["O".into(), "O".into(), "B-x".into()]).unwrap();

        let mut tape = Tape::new();
        let vars = m.params.register(&mut tape, false);
        let slots = [
            InputSlot::Token(prefix[0]),
            InputSlot::Token(prefix[1]),
            InputSlot::Token(cands[1]),
        ];
        let (fa, la) = m.model_loss(&mut tape, &vars, &slots, &[], 1, &tags, None).unwrap();

        let mut tape2 = Tape::new();
        let vars2 = m.params.register(&mut tape2, false);
        let a = tape2.constant(Tensor::vector(vec![0.0, 1.0, 0.0]));
        let slots2 = [
            InputSlot::Token(prefix[0]),
            InputSlot::Token(prefix[1]),
            InputSlot::Mixture(a),
        ];
        let (fb, lb) = m.model_loss(&mut tape2, &vars2, &slots2, &cands, 1, &tags, None).unwrap();
        assert_eq!(tape.value(fa.emissions), tape2.value(fb.emissions));
        assert_eq!(tape.value(fa.intent_logits), tape2.value(fb.intent_logits));
        assert_eq!(tape.scalar(la.total).to_bits(), tape2.scalar(lb.total).to_bits());
    }
}

#[test]
fn char_cnn_is_deterministic_and_hand_computable() {
    let mut m = tiny(true, 4);
    m.config.char_filter_count = 1;
    m.config.char_emb_dim = 1;
    // Characters a, b, c embedded as 1, 2, 3; kernel taps (1, 10, 100), bias 0.
    let vocab = Vocabulary::build([], ["abc"]);
    let chars = CharVocabulary::from_vocabulary(&vocab);
    let mut emb = vec![0.0; chars.len()];
    for (c, v) in [('a', 1.0), ('b', 2.0), ('c', 3.0)] {
        emb[chars.index(c)] = v;
    }
    m.params.char_cnn = Some(CharCnnParams {
        embeddings: Tensor::matrix(chars.len(), 1, emb),
        kernel: Tensor::matrix(1, 3, vec![1.0, 10.0, 100.0]),
        bias: Tensor::vector(vec![0.0]),
    });
    let mut tape = Tape::new();
    let vars = m.params.register(&mut tape, false);
    let code = chars.encode("abc");
    let out = char_cnn_embed(&mut tape, &vars, &m.config, &code).unwrap();
    // windows: [0,a,b]=210, [a,b,c]=321, [b,c,0]=32
    assert_eq!(tape.value(out).data(), &[321.0]);
    let again = char_cnn_embed(&mut tape, &vars, &m.config, &code).unwrap();
    assert_eq!(tape.value(out), tape.value(again));
    let single = char_cnn_embed(&mut tape, &vars, &m.config, &chars.encode("b")).unwrap();
    assert_eq!(tape.value(single).data(), &[20.0]);
}

fn zero_lstm(m: &mut NluModel) {
    for layer in &mut m.params.layers {
        for p in [&mut layer.forward, &mut layer.backward] {
            p.weight.data_mut().fill(0.0);
            p.bias.data_mut().fill(0.0);
        }
    }
}

#[test]
fn zero_weights_give_zero_states() {
    let mut m = tiny(false, 5);
    zero_lstm(&mut m);
    let mut tape = Tape::new();
    let vars = m.params.register(&mut tape, false);
    let toks = ids(&m, &["my", "pin", "one"]);
    let slots: Vec<_> = toks.iter().map(|&t| InputSlot::Token(t)).collect();
    let xs = m.embed_tokens(&mut tape, &vars, &slots, &[], None).unwrap();
    let out = bilstm_forward(&mut tape, &vars, &m.config, &xs, None).unwrap();
    for s in out.states {
        assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn single_step_is_shared_by_both_directions() {
    let mut m = tiny(false, 6);
    for layer in &mut m.params.layers {
        layer.backward = layer.forward.clone();
    }
    let mut tape = Tape::new();
    let vars = m.params.register(&mut tape, false);
    let xs = m
        .embed_tokens(&mut tape, &vars, &[InputSlot::Token(2)], &[], None)
        .unwrap();
    let out = bilstm_forward(&mut tape, &vars, &m.config, &xs, None).unwrap();
    let v = tape.value(out.states[0]).data();
    assert_eq!(&v[..2], &v[2..]);
    assert_eq!(tape.value(out.last_forward), tape.value(out.first_backward));
}

/// Scalar LSTM recurrence written out by hand.
fn scalar_lstm(xs: &[f64], w: &[f64; 8], b: &[f64; 4]) -> Vec<f64> {
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let (mut h, mut c) = (0.0, 0.0);
    let mut out = Vec::new();
    for &x in xs {
        let pre = |g: usize| w[2 * g] * x + w[2 * g + 1] * h + b[g];
        let (i, f, gg, o) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
        c = f * c + i * gg;
        h = o * c.tanh();
        out.push(h);
    }
    out
}

#[test]
fn two_step_recurrence_matches_hand_trace() {
    let vocab = Vocabulary::build([], ["a", "b"]);
    let config = ModelConfig {
        embedding_dim: 1,
        hidden_dim: 1,
        ..Default::default()
    };
    let mut m = NluModel::new(config, vocab, labels(&["A"], &["O"]), &mut rng_from_seed(0)).unwrap();
    m.params.word_embeddings = Tensor::matrix(3, 1, vec![0.0, 0.7, -1.3]);
    let w = [0.5, -0.3, 0.8, 0.2, -0.6, 0.9, 0.4, 0.1];
    let b = [0.1, 1.0, -0.2, 0.05];
    let wb = [0.3, 0.2, -0.4, 0.6, 0.7, -0.5, 0.2, 0.3];
    let bb = [0.0, 0.5, 0.1, -0.1];
    m.params.layers[0].forward = LstmParams {
        weight: Tensor::matrix(4, 2, w.to_vec()),
        bias: Tensor::vector(b.to_vec()),
    };
    m.params.layers[0].backward = LstmParams {
        weight: Tensor::matrix(4, 2, wb.to_vec()),
        bias: Tensor::vector(bb.to_vec()),
    };
    let mut tape = Tape::new();
    let vars = m.params.register(&mut tape, false);
    let xs = m
        .embed_tokens(&mut tape, &vars, &[InputSlot::Token(1), InputSlot::Token(2)], &[], None)
        .unwrap();
    // Only check layer one: truncate the stack.
    let mut one_layer = vars.clone();
    one_layer.layers.truncate(1);
    let out = bilstm_forward(&mut tape, &one_layer, &m.config, &xs, None).unwrap();
    let fwd = scalar_lstm(&[0.7, -1.3], &w, &b);
    let mut bwd = scalar_lstm(&[-1.3, 0.7], &wb, &bb);
    bwd.reverse();
    for t in 0..2 {
        let v = tape.value(out.states[t]).data();
        assert!((v[0] - fwd[t]).abs() < 1e-14);
        assert!((v[1] - bwd[t]).abs() < 1e-14);
    }
}

#[test]
fn uniform_intents_single_tag_gives_ln_four() {
    let vocab = Vocabulary::build([], ["x", "y"]);
    let config = ModelConfig {
        embedding_dim: 3,
        hidden_dim: 2,
        ..Default::default()
    };
    let mut m = NluModel::new(
        config,
        vocab,
        labels(&["A", "B", "C", "D"], &["O"]),
        &mut rng_from_seed(8),
    )
    .unwrap();
    m.params.intent_weight.data_mut().fill(0.0);
    let out = m
        .output(&EncodedExample {
            tokens: vec![1, 2],
            tags: vec![0, 0],
            intent: 2,
        })
        .unwrap();
    assert!((out.intent_loss - 4f64.ln()).abs() < 1e-15);
    assert_eq!(out.crf_loss, 0.0);
    assert!((out.loss - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn loss_is_nonnegative_sum_of_parts() {
    for seed in 0..5 {
        let m = tiny(seed % 2 == 0, seed);
        let ex = EncodedExample {
            tokens: ids(&m, &["call", "one", "two"]),
            tags: m.encode_tags(&["O".into(), "B-x".into(), "I-x".into()]).unwrap(),
            intent: 0,
        };
        let out = m.output(&ex).unwrap();
        assert!(out.intent_loss >= 0.0 && out.crf_loss >= 0.0);
        assert_eq!(out.loss, out.intent_loss + out.crf_loss);
    }
}

#[test]
fn bad_labels_are_contract_violations() {
    let m = tiny(false, 9);
    let bad_intent = EncodedExample {
        tokens: vec![1],
        tags: vec![0],
        intent: 5,
    };
    assert!(matches!(m.output(&bad_intent), Err(ModelError::LabelOutOfRange { .. })));
    let bad_tag = EncodedExample {
        tokens: vec![1],
        tags: vec![7],
        intent: 0,
    };
    assert!(matches!(m.output(&bad_tag), Err(ModelError::LabelOutOfRange { .. })));
}

fn loss_with(m: &NluModel, tensors: &[Tensor], ex: &EncodedExample) -> f64 {
    let mut m = m.clone();
    for (dst, src) in m.params.tensors_mut().into_iter().zip(tensors) {
        *dst = src.clone();
    }
    m.output(ex).unwrap().loss
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for chars in [false, true] {
        let m = tiny(chars, 10);
        let ex = EncodedExample {
            tokens: ids(&m, &["call", "two"]),
            tags: m.encode_tags(&["O".into(), "B-x".into()]).unwrap(),
            intent: 1,
        };
        let mut tape = Tape::new();
        let vars = m.params.register(&mut tape, true);
        let slots: Vec<_> = ex.tokens.iter().map(|&t| InputSlot::Token(t)).collect();
        let (_, loss) = m
            .model_loss(&mut tape, &vars, &slots, &[], ex.intent, &ex.tags, None)
            .unwrap();
        let grads = tape.backward(loss.total);
        let analytic: Vec<Tensor> = vars.all().iter().map(|&v| grads.wrt(v)).collect();
        let base: Vec<Tensor> = m.params.tensors().into_iter().cloned().collect();
        let report = gradient_check(&base, &analytic, |ts| loss_with(&m, ts, &ex), 1e-5, 1e-4).unwrap();
        assert!(report.passed, "chars={chars}: {report:?}");
    }
}

#[test]
fn dropout_changes_training_passes_only() {
    let m = tiny(false, 11);
    let toks = ids(&m, &["my", "pin", "one"]);
    let slots: Vec<_> = toks.iter().map(|&t| InputSlot::Token(t)).collect();
    let run = |rng: Option<&mut crate::numerics::rng::Rng>| {
        let mut tape = Tape::new();
        let vars = m.params.register(&mut tape, false);
        let f = m.forward(&mut tape, &vars, &slots, &[], rng).unwrap();
        tape.value(f.emissions).clone()
    };
    let clean = run(None);
    assert_eq!(clean, run(None));
    let mut rng = rng_from_seed(1);
    assert_ne!(clean, run(Some(&mut rng)));
}

#[test]
fn predict_returns_labels_in_range() {
    let m = tiny(true, 12);
    let p = m.predict(&ids(&m, &["call", "one", "two"])).unwrap();
    assert!(p.intent < 2);
    assert_eq!(p.tags.len(), 3);
    assert!(p.tags.iter().all(|&t| t < 3));
}

#[test]
fn pretrained_vectors_overwrite_known_rows() {
    use std::io::Write;
    let mut m = tiny(false, 13);
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "3 3\ncall 1 2 3\nzebra 0 0 0\none 0.5 0.25 -1").unwrap();
    let before = m.params.word_embeddings.row(m.vocab.index("two").unwrap()).to_vec();
    let stats = m.apply_pretrained(f.path()).unwrap();
    assert_eq!(stats.matched, 2);
    assert_eq!(stats.skipped, 1);
    assert!(stats.missing.contains(&"two".to_string()));
    assert_eq!(m.params.word_embeddings.row(m.vocab.index("call").unwrap()), &[1.0, 2.0, 3.0]);
    assert_eq!(m.params.word_embeddings.row(m.vocab.index("two").unwrap()), before.as_slice());

    let mut bad = tempfile::NamedTempFile::new().unwrap();
    writeln!(bad, "1 3\ncall 1 2").unwrap();
    assert!(matches!(m.apply_pretrained(bad.path()), Err(ModelError::EmbeddingFile { line: 2, .. })));
}
