use rand::Rng as _;

use super::{encode_target, AttackConfig, AttackError, AttackTarget, ReconstructionResult};
use crate::data::ReducedVocabulary;
use crate::model::{InputSlot, NluModel};
use crate::numerics::rng::{rng_for, Purpose};
use crate::numerics::{AdamState, Tape, Tensor};

/// Optimizes unconstrained embedding vectors for the unknown positions and
/// decodes each to the nearest reduced-vocabulary embedding (Euclidean).
/// Vectors start uniform in [-0.1, 0.1].
pub fn continuous_baseline_attack(
    model: &NluModel,
    target: &AttackTarget,
    v0: &ReducedVocabulary,
    config: &AttackConfig,
) -> Result<ReconstructionResult, AttackError> {
    let d = model.config.embedding_dim;
    let mut rng = rng_for(config.seed, Purpose::Attack);
    let init = (0..target.n)
        .map(|_| (0..d).map(|_| rng.gen_range(-0.1..=0.1)).collect())
        .collect();
    continuous_baseline_from(model, target, v0, config, init)
}

/// As [`continuous_baseline_attack`] from explicit starting vectors.
pub fn continuous_baseline_from(
    model: &NluModel,
    target: &AttackTarget,
    v0: &ReducedVocabulary,
    config: &AttackConfig,
    init: Vec<Vec<f64>>,
) -> Result<ReconstructionResult, AttackError> {
    config.validate()?;
    if v0.len() < 2 {
        return Err(AttackError::Config("reduced vocabulary needs at least two tokens".into()));
    }
    let enc = encode_target(model, target, config)?;
    let d = model.config.embedding_dim;
    if init.len() != enc.n || init.iter().any(|v| v.len() != d) {
        return Err(AttackError::Config(format!("expected {} start vectors of width {d}", enc.n)));
    }
    let mut vectors: Vec<Tensor> = init.into_iter().map(Tensor::vector).collect();
    let mut adam = AdamState::new(vectors.iter(), config.lr0);
    let mut lr = config.lr0;
    let mut trace = Vec::with_capacity(config.attack_epochs);

    let loss_and_grads = |vectors: &[Tensor]| -> Result<(f64, Vec<Tensor>), AttackError> {
        let mut tape = Tape::new();
        let vars = model.params.register(&mut tape, false);
        let free: Vec<_> = vectors.iter().map(|v| tape.param(v.clone())).collect();
        if tape.registered_params() != free.as_slice() {
            return Err(AttackError::Contract("model parameters are registered for gradients".into()));
        }
        let mut slots: Vec<InputSlot> = enc.prefix.iter().map(|&t| InputSlot::Token(t)).collect();
        slots.extend(free.iter().map(|&v| InputSlot::Free(v)));
        let (_, loss) = model.model_loss(&mut tape, &vars, &slots, v0.indices(), enc.intent, &enc.tags, None)?;
        let value = tape.scalar(loss.total);
        let grads = tape.backward(loss.total);
        Ok((value, free.iter().map(|&v| grads.wrt(v)).collect()))
    };

    for epoch in 0..config.attack_epochs {
        let (loss, grads) = loss_and_grads(&vectors)?;
        if !loss.is_finite() {
            return Err(AttackError::NonFinite {
                epoch,
                loss,
                logits: Tensor::vector(vectors.iter().flat_map(|v| v.data().to_vec()).collect()),
            });
        }
        trace.push(loss);
        adam.lr = lr;
        let mut refs: Vec<&mut Tensor> = vectors.iter_mut().collect();
        adam.step(&mut refs, &grads)?;
        lr *= config.lr_decay;
    }
    let (final_loss, _) = loss_and_grads(&vectors)?;

    let w = &model.params.word_embeddings;
    let mut tokens = Vec::with_capacity(enc.n);
    let mut ties = Vec::new();
    let mut activations = Vec::with_capacity(enc.n);
    for (pos, v) in vectors.iter().enumerate() {
        let dists: Vec<f64> = v0
            .indices()
            .iter()
            .map(|&i| w.row(i).iter().zip(v.data()).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let neg: Vec<f64> = dists.iter().map(|d| -d).collect();
        let (best, tie) = crate::numerics::argmax(&neg);
        if tie {
            ties.push(pos);
        }
        tokens.push(model.vocab.token(v0.indices()[best]).to_string());
        activations.push(dists);
    }
    Ok(ReconstructionResult {
        tokens,
        activations,
        final_loss,
        loss_trace: trace,
        ties,
        final_temperature: None,
        final_lr: lr,
    })
}
