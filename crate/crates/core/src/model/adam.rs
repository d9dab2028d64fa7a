use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl AdamConfig {
    /// Learning rate for MLPs.
    pub const MLP_LR: f64 = 1e-3;
    /// Learning rate for linear and MIL models.
    pub const LINEAR_LR: f64 = 2e-1;

    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..AdamConfig::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: Self::MLP_LR, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Bias-corrected adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Adam { config, step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params] }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params` along `grads`. A non-finite gradient aborts
    /// before anything is modified.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension { expected: self.m.len(), got: params.len().min(grads.len()) });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        let AdamConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g + weight_decay * *p;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn step_model(&mut self, model: &mut Model, grads: &[f64]) -> Result<()> {
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        self.step(model.params_mut(), grads)
    }
}
