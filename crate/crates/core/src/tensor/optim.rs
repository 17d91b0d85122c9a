use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { lr: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    step: u32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                op: "optimizer",
                expected: vec![params.len()],
                actual: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            g.expect_shape("optimizer grad", p.shape())?;
        }
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                let lr = T::of(lr);
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
                    self.second = self.first.clone();
                }
                let t = self.step as i32;
                let step_size = T::of(lr / (1.0 - beta1.powi(t)));
                let v_corr = T::of(1.0 / (1.0 - beta2.powi(t)));
                let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(eps));
                let (c1, c2) = (T::one() - b1, T::one() - b2);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (((w, &d), m), v) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *m = b1 * *m + c1 * d;
                        *v = b2 * *v + c2 * d * d;
                        *w -= step_size * *m / ((*v * v_corr).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
