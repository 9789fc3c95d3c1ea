//! AdamW with global-norm clipping and a cosine learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub cfg: AdamWConfig,
}

impl OptimizerState {
    pub fn new(n_params: usize, cfg: AdamWConfig) -> Self {
        OptimizerState { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0, cfg }
    }
}

/// `base * (1 + cos(pi t / T)) / 2`, held at 0 past `T`.
pub fn cosine_lr(base: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = (t.min(total) as f64) / total as f64;
    base * 0.5 * (1.0 + (core::f64::consts::PI * frac).cos())
}

pub fn global_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One decoupled-decay Adam update at learning rate `lr`. Gradients are
/// clipped to the configured global norm before entering the moments.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != grads.len() {
        return Err(Error::Shape("parameter, gradient and moment sizes differ".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradients"));
    }
    let c = state.cfg;
    let norm = global_norm(grads);
    let clip = if norm > c.clip_norm { c.clip_norm / norm } else { 1.0 };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let decay = 1.0 - lr * c.weight_decay;
    for i in 0..params.len() {
        let g = grads[i] * clip;
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] = params[i] * decay - lr * m_hat / (v_hat.sqrt() + c.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_without_decay_leave_params() {
        let mut p = vec![0.5, -2.0];
        let mut s = OptimizerState::new(2, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        adamw_step(&mut p, &[0.0, 0.0], &mut s, 1e-3).unwrap();
        assert_eq!(p, vec![0.5, -2.0]);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0, 500), 1e-3);
        assert!((cosine_lr(1e-3, 250, 500) - 5e-4).abs() < 1e-18);
        assert_eq!(cosine_lr(1e-3, 500, 500), 0.0);
        let mut p = vec![1.0];
        let mut s = OptimizerState::new(1, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        adamw_step(&mut p, &[0.3], &mut s, cosine_lr(1e-3, 500, 500)).unwrap();
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn scalar_recurrence_two_steps() {
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.01, clip_norm: f64::INFINITY, ..Default::default() };
        let mut s = OptimizerState::new(1, cfg);
        let mut p = vec![1.0];
        let (g1, g2, lr) = (0.5, -0.25, 0.1);
        adamw_step(&mut p, &[g1], &mut s, lr).unwrap();
        adamw_step(&mut p, &[g2], &mut s, lr).unwrap();
        // Hand-rolled recurrence.
        let (b1, b2, eps, wd) = (0.9f64, 0.999f64, 1e-8, 0.01);
        let mut theta = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, g) in [(1, g1), (2, g2)] {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta = theta - lr * wd * theta - lr * mh / (vh.sqrt() + eps);
        }
        assert!((p[0] - theta).abs() < 1e-12);
    }

    #[test]
    fn clipping_and_rejection() {
        let mut s = OptimizerState::new(2, AdamWConfig { clip_norm: 1.0, ..Default::default() });
        let mut p = vec![0.0, 0.0];
        adamw_step(&mut p, &[30.0, 40.0], &mut s, 1e-3).unwrap();
        assert!((s.m[0] - 0.1 * 0.6).abs() < 1e-15 && (s.m[1] - 0.1 * 0.8).abs() < 1e-15);
        assert!(adamw_step(&mut p, &[f64::NAN, 0.0], &mut s, 1e-3).is_err());
    }
}
