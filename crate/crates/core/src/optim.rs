//! Adam with bias correction. Moment buffers are keyed by parameter position,
//! so the same parameter ordering must be passed on every step.

use crate::tensor::{LayerParams, Real};

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using each parameter's accumulated gradient times
    /// `grad_scale`, then clears the gradients. Parameters without a gradient
    /// are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [&mut LayerParams<T>], grad_scale: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        let scale = T::lit(grad_scale);

        let mut slot = 0;
        for p in params.iter_mut() {
            for tensor in [&mut p.weight, &mut p.bias] {
                let n = tensor.len();
                if self.first.len() <= slot {
                    self.first.push(vec![T::zero(); n]);
                    self.second.push(vec![T::zero(); n]);
                }
                let grad = tensor.grad().map(|g| g.to_vec());
                let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
                debug_assert_eq!(m.len(), n, "parameter order changed between steps");
                for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                    let g = grad.as_ref().map_or(T::zero(), |g| g[i] * scale);
                    m[i] = b1 * m[i] + (T::one() - b1) * g;
                    v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
                tensor.zero_grad();
                slot += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{LayerKind, Tensor};

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        let kind = LayerKind::Linear {
            in_features: 2,
            out_features: 1,
        };
        let mut p = LayerParams::<f64>::zeros(kind).unwrap();
        p.weight.accumulate_grad(&[3.0, -0.5]);
        p.bias.accumulate_grad(&[0.0]);
        let mut adam = Adam::new(0.01);
        adam.step(&mut [&mut p], 1.0);
        let w = p.weight.data();
        assert!((w[0] + 0.01).abs() < 1e-9);
        assert!((w[1] - 0.01).abs() < 1e-9);
        assert_eq!(p.bias.data(), &[0.0]);
        assert!(p.weight.grad().is_none());
    }

    #[test]
    fn zero_gradient_leaves_parameters_untouched() {
        let kind = LayerKind::Linear {
            in_features: 3,
            out_features: 2,
        };
        let mut p = LayerParams::new(
            kind,
            Tensor::from_fn(vec![2, 3], |i| i as f64 * 0.1),
            Tensor::vector(vec![0.5, -0.5]).unwrap(),
        )
        .unwrap();
        let before = p.clone();
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            p.weight.accumulate_grad(&[0.0; 6]);
            adam.step(&mut [&mut p], 1.0);
        }
        assert_eq!(p, before);
    }
}
