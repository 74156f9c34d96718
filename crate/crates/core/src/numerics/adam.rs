use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

/// Adam with bias correction over a fixed list of parameter tensors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    /// Zero moments shaped like `params`, with the usual 0.9 / 0.999 / 1e-8.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, lr: f64) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), NumericsError> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(NumericsError::ShapeMismatch {
                expected: vec![self.first.len()],
                got: vec![params.len(), grads.len()],
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(NumericsError::ShapeMismatch {
                    expected: m.shape().to_vec(),
                    got: if p.shape() != m.shape() { p.shape() } else { g.shape() }.to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Tensor::vector(vec![0.3, -1.2]);
        let mut adam = AdamState::new([&p], 0.1);
        adam.step(&mut [&mut p], &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p.data(), &[0.3, -1.2]);
        assert_eq!(adam.first_moments()[0], Tensor::zeros(&[2]));
        assert_eq!(adam.second_moments()[0], Tensor::zeros(&[2]));
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let mut p = Tensor::vector(vec![1.0]);
        let mut adam = AdamState::new([&p], 0.1);
        adam.step(&mut [&mut p], &[Tensor::vector(vec![1.0])]).unwrap();
        let want = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] - want).abs() < 1e-15);
        assert!((p.data()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn repeated_steps_descend_monotonically() {
        let mut p = Tensor::vector(vec![1.0]);
        let mut adam = AdamState::new([&p], 0.1);
        let mut prev = p.data()[0];
        for _ in 0..2 {
            adam.step(&mut [&mut p], &[Tensor::vector(vec![1.0])]).unwrap();
            assert!(p.data()[0] < prev);
            prev = p.data()[0];
        }
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let mut adam = AdamState::new([&p], 0.1);
        assert!(adam.step(&mut [&mut p], &[Tensor::zeros(&[3])]).is_err());
        assert_eq!(adam.step_count(), 0);
    }
}
