use super::*;
use crate::data::{synth_corpus, Grammar, LabeledExample};

fn ex(tokens: &[&str], tags: &[&str], intent: &str) -> LabeledExample {
    LabeledExample::new(
        tokens.iter().map(|s| s.to_string()).collect(),
        tags.iter().map(|s| s.to_string()).collect(),
        intent,
    )
}

fn ten_examples() -> Corpus {
    let mut v = Vec::new();
    for i in 0..5 {
        let city = ["paris", "rome", "oslo", "lima", "kyiv"][i];
        v.push(ex(&["weather", "in", city], &["O", "O", "B-city"], "GetWeather"));
        v.push(ex(&["play", city, "songs"], &["O", "B-artist", "O"], "PlayMusic"));
    }
    Corpus { train: v, val: vec![] }
}

fn small_config() -> ModelConfig {
    ModelConfig {
        embedding_dim: 8,
        hidden_dim: 8,
        ..Default::default()
    }
}

#[test]
fn loss_descends_on_tiny_data() {
    let cfg = TrainConfig {
        max_epochs: 5,
        ..Default::default()
    };
    let (_, report) = train(&ten_examples(), &small_config(), &cfg).unwrap();
    assert_eq!(report.train_loss.len(), 5);
    assert!(report.train_loss[4] < report.train_loss[0]);
}

#[test]
fn same_seed_gives_identical_report_and_params() {
    let corpus = Corpus::split(synth_corpus(&Grammar::default(), 40, 3).unwrap(), 0.1);
    let cfg = TrainConfig {
        max_epochs: 2,
        dropout_enabled: true,
        seed: 9,
        ..Default::default()
    };
    let (m1, r1) = train(&corpus, &small_config(), &cfg).unwrap();
    let (m2, r2) = train(&corpus, &small_config(), &cfg).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(m1.params.hash(), m2.params.hash());
    let (m3, _) = train(&corpus, &small_config(), &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(m1.params.hash(), m3.params.hash());
}

#[test]
fn overfits_ten_examples() {
    let corpus = ten_examples();
    let cfg = TrainConfig {
        max_epochs: 40,
        learning_rate: 1e-2,
        ..Default::default()
    };
    let (model, _) = train(&corpus, &small_config(), &cfg).unwrap();
    let acc = evaluate_model(&model, &corpus.train).unwrap();
    assert_eq!(acc.intent, 1.0);
    assert_eq!(acc.tags, 1.0);
}

#[test]
fn single_intent_corpus_is_always_right() {
    let corpus = Corpus {
        train: vec![ex(&["hi"], &["O"], "Greet"), ex(&["hello", "there"], &["O", "O"], "Greet")],
        val: vec![],
    };
    let model = init_model(&corpus, &small_config(), 1).unwrap();
    let acc = evaluate_model(&model, &corpus.train).unwrap();
    assert_eq!(acc, Accuracy { intent: 1.0, tags: 1.0 });
}

#[test]
fn untrained_model_is_near_chance() {
    let data = synth_corpus(&Grammar::default(), 500, 4).unwrap();
    let corpus = Corpus { train: data, val: vec![] };
    let model = init_model(&corpus, &small_config(), 2).unwrap();
    let acc = evaluate_model(&model, &corpus.train).unwrap();
    // 5 balanced intents; a constant predictor sits near 0.2.
    assert!(acc.intent < 0.45, "{}", acc.intent);
}

#[test]
fn early_stopping_restores_best_epoch() {
    let corpus = Corpus::split(synth_corpus(&Grammar::default(), 60, 5).unwrap(), 0.2);
    let cfg = TrainConfig {
        max_epochs: 12,
        learning_rate: 0.05,
        early_stopping_enabled: true,
        patience: 2,
        ..Default::default()
    };
    let (model, report) = train(&corpus, &small_config(), &cfg).unwrap();
    let best = report.val_loss[..report.stopped_epoch]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    assert_eq!(report.val_loss[report.best_epoch - 1], best);
    let val: Vec<_> = corpus.val.iter().map(|e| model.encode(e).unwrap()).collect();
    assert_eq!(mean_loss(&model, &val).unwrap(), best);
    if report.stopped_epoch < cfg.max_epochs {
        assert_eq!(report.stopped_epoch, report.best_epoch + cfg.patience);
    }
}

#[test]
fn divergence_is_reported() {
    let mut model = init_model(&ten_examples(), &small_config(), 0).unwrap();
    model.params.transitions.data_mut()[0] = f64::NAN;
    let err = train_model(model, &ten_examples(), &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, TrainError::Diverged { epoch: 1, last_finite_epoch: None, .. }), "{err}");
}

#[test]
fn bad_configs_are_rejected() {
    let corpus = ten_examples();
    for cfg in [
        TrainConfig { patience: 0, ..Default::default() },
        TrainConfig { max_epochs: 0, ..Default::default() },
        TrainConfig { early_stopping_enabled: true, ..Default::default() },
    ] {
        assert!(matches!(train(&corpus, &small_config(), &cfg), Err(TrainError::Config(_))));
    }
}
