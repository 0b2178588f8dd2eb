use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer with per-parameter state buffers.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    /// SGD velocity, or Adam first moment.
    first: Vec<Vec<T>>,
    /// Adam second moment.
    second: Vec<Vec<T>>,
    steps: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self {
            kind,
            first: zeros(),
            second: match kind {
                OptimizerKind::Adam { .. } => zeros(),
                OptimizerKind::SgdMomentum { .. } => Vec::new(),
            },
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// Applies one update from each parameter's accumulated gradient.
    /// Parameters without a gradient buffer are left alone.
    pub fn step(&mut self, params: &mut [Tensor<T>], learning_rate: f64) {
        self.steps += 1;
        let lr = T::of(learning_rate);
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                let mu = T::of(momentum);
                for (p, v) in params.iter_mut().zip(&mut self.first) {
                    let Some(g) = p.grad().map(<[T]>::to_vec) else { continue };
                    for ((w, v), g) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                        *v = mu * *v + g;
                        *w -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(epsilon));
                let one = T::one();
                let c1 = one - b1.powi(self.steps);
                let c2 = one - b2.powi(self.steps);
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let Some(g) = p.grad().map(<[T]>::to_vec) else { continue };
                    for (((w, m), v), g) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
