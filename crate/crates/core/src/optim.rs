//! Optimizers applied to a [`ParamStore`] given an accumulated gradient.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::math;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    /// Plain gradient descent with decoupled weight decay.
    Sgd { lr: f64, weight_decay: f64 },
    /// Adam with decoupled weight decay.
    AdamW { lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

impl OptimizerConfig {
    pub fn adamw(lr: f64) -> OptimizerConfig {
        OptimizerConfig::AdamW { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }

    pub fn sgd(lr: f64) -> OptimizerConfig {
        OptimizerConfig::Sgd { lr, weight_decay: 0.0 }
    }
}

/// Optimizer state for one parameter store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Optimizer {
        let (m, v) = match config {
            OptimizerConfig::Sgd { .. } => (Vec::new(), Vec::new()),
            OptimizerConfig::AdamW { .. } => (params.zeros_like(), params.zeros_like()),
        };
        Optimizer { config, step: 0, m, v }
    }

    /// Applies one update. `scale` multiplies the gradient first (e.g. `1/batch`).
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Mat], scale: f64) {
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr, weight_decay } => {
                for (p, g) in params.tensors.iter_mut().zip(grads) {
                    for (x, d) in p.data.iter_mut().zip(&g.data) {
                        *x -= lr * (scale * d) + lr * weight_decay * *x;
                    }
                }
            }
            OptimizerConfig::AdamW { lr, beta1, beta2, eps, weight_decay } => {
                let t = self.step as f64;
                let c1 = 1.0 - math::powf(beta1, t);
                let c2 = 1.0 - math::powf(beta2, t);
                for ((p, g), (m, v)) in params
                    .tensors
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for (((x, d), mi), vi) in
                        p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut())
                    {
                        let d = scale * d;
                        *mi = beta1 * *mi + (1.0 - beta1) * d;
                        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *x -= lr * (mhat / (math::sqrt(vhat) + eps) + weight_decay * *x);
                    }
                }
            }
        }
    }
}
