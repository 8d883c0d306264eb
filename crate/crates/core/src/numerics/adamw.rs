use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::config(
                "optimizer needs lr > 0, betas in [0, 1), eps > 0, weight_decay >= 0",
            ));
        }
        Ok(())
    }
}

/// Per-parameter AdamW moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub hyper: AdamW,
    pub step: u64,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

impl AdamWState {
    pub fn new(hyper: AdamW, n_params: usize) -> Self {
        AdamWState {
            hyper,
            step: 0,
            m1: vec![0.0; n_params],
            m2: vec![0.0; n_params],
        }
    }

    /// One decoupled-weight-decay step with bias correction, in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m1.len() {
            return Err(Error::shape(format!(
                "adamw: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m1.len()
            )));
        }
        let AdamW {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m1[i] = beta1 * self.m1[i] + (1.0 - beta1) * g;
            self.m2[i] = beta2 * self.m2[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m1[i] / c1;
            let v_hat = self.m2[i] / c2;
            params[i] = params[i] * (1.0 - lr * weight_decay) - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
