//! Adam with bias correction and the exponential learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{GpeError, Result};
use crate::params::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update on every entry of `store`; `step` is 1-based. Gradients are zeroed afterwards.
///
/// All gradients are checked before any parameter moves, so a non-finite gradient
/// leaves the store untouched.
pub fn adam_step(store: &mut ParameterStore, lr: f64, cfg: AdamConfig, step: u64) -> Result<()> {
    if step == 0 {
        return Err(GpeError::Contract("adam step counter is 1-based".into()));
    }
    if let Some((k, _)) = store.iter().find(|(_, e)| !e.grad.is_finite()) {
        return Err(GpeError::NonFinite {
            what: format!("gradient of `{k}`"),
        });
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for (_, e) in store.iter_mut() {
        let g = e.grad.data().to_vec();
        let m = e.adam_m.data_mut();
        for (mi, gi) in m.iter_mut().zip(&g) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
        }
        let v = e.adam_v.data_mut();
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
        }
        let (m, v) = (e.adam_m.data().to_vec(), e.adam_v.data().to_vec());
        for ((p, mi), vi) in e.value.data_mut().iter_mut().zip(&m).zip(&v) {
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *p -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        e.grad.fill(0.0);
    }
    Ok(())
}

/// Exponential interpolation `start·(end/start)^(step/total)`, exact at both endpoints.
/// Falls back to linear interpolation when either endpoint is zero.
pub fn lr_schedule(step: u64, total_steps: u64, lr_start: f64, lr_end: f64) -> f64 {
    if total_steps == 0 || step == 0 || lr_start == lr_end {
        return lr_start;
    }
    if step >= total_steps {
        return lr_end;
    }
    let frac = step as f64 / total_steps as f64;
    if lr_start == 0.0 || lr_end == 0.0 {
        return lr_start + (lr_end - lr_start) * frac;
    }
    lr_start * (lr_end / lr_start).powf(frac)
}
