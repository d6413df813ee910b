//! Adaptive-moment optimizer over a parameter registry.

use super::nn::ParamSet;
use super::TensorError;
use serde::{Deserialize, Serialize};

/// Optimizer hyperparameters carried in run configs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment state plus the step counter.
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter in registry order. Requires that a
    /// backward pass has populated at least one gradient since the last
    /// `zero_grads`.
    pub fn step(&mut self, params: &ParamSet) -> Result<(), TensorError> {
        if self.m.is_empty() {
            self.m = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            self.v = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        }
        if self.m.len() != params.len() {
            return Err(TensorError::StateSizeMismatch {
                state: self.m.len(),
                registry: params.len(),
            });
        }
        if !params.tensors().iter().any(|t| t.grad_seeded()) {
            return Err(TensorError::MissingGradients);
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for (idx, tensor) in params.tensors().iter().enumerate() {
            let grad = tensor.grad();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let mut value = tensor.values();
            for i in 0..grad.len() {
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * grad[i];
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
            tensor.set_values(&value);
        }
        Ok(())
    }
}
