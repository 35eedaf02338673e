//! Adam with decoupled weight decay and a step learning-rate schedule.

use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{mismatch, Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Applied as `theta -= lr * weight_decay * theta` to parameters flagged
    /// for decay, separately from the adaptive update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First and second moment estimates, one array per parameter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizerState {
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Array> = params.iter().map(|p| Array::zeros(p.value.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One Adam update of every parameter.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Array],
    state: &mut OptimizerState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(mismatch("adam_step", &[params.len()], &[grads.len(), state.m.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(mismatch("adam_step", p.value.shape(), g.shape()));
        }
    }
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(Error::InvalidParams("non-finite gradient".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let decay = if p.decay { lr * cfg.weight_decay } else { 0.0 };
        let it = p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((theta, &gi), (mi, vi)) in it {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta -= decay * *theta;
            *theta -= lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

/// Multiplies the base rate by `factor` at each listed epoch (0-based).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub milestones: Vec<usize>,
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * libm::pow(self.factor, k as f64)
    }
}
