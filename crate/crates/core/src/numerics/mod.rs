//! Differentiable kernel: tensors, a gradient tape, Adam and a
//! finite-difference gradient oracle. Everything is `f64`.

mod adam;
mod gradcheck;
mod ops;
pub mod rng;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use ops::{argmax, log_sum_exp, softmax_with_temperature};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("loss function is not deterministic (is dropout enabled?)")]
    NonDeterministic,
}
