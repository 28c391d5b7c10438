//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::NetParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state; the moments are flat, in parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One update of a flat parameter vector.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.apply_tensors(vec![params], &[grads])
    }

    fn apply_tensors(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) -> Result<()> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if total != self.m.len() || grads.iter().map(|g| g.len()).sum::<usize>() != total {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments for {total} parameters",
                self.m.len()
            )));
        }
        let mut offset = 0;
        for g in grads {
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "gradient", index: offset + j });
            }
            offset += g.len();
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut k = 0;
        for (p, g) in params.into_iter().zip(grads) {
            for (w, &gi) in p.iter_mut().zip(g.iter()) {
                let m = beta1 * self.m[k] + (1.0 - beta1) * gi;
                let v = beta2 * self.v[k] + (1.0 - beta2) * gi * gi;
                self.m[k] = m;
                self.v[k] = v;
                *w -= learning_rate * (m / bc1) / ((v / bc2).sqrt() + epsilon);
                k += 1;
            }
        }
        Ok(())
    }
}

/// Apply one Adam update to `params` in place.
pub fn adam_step(params: &mut NetParams, grads: &NetParams, state: &mut AdamState) -> Result<()> {
    let g: Vec<&[f64]> = grads.named_tensors().into_iter().map(|(_, _, t)| t).collect();
    state.apply_tensors(params.tensors_mut(), &g)
}
