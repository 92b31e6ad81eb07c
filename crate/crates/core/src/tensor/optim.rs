use serde::{Deserialize, Serialize};

use super::{ParamStore, Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers for one parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn new(n: usize) -> Self {
        AdamMoments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_update(
    param: &mut [f32],
    grad: &[f32],
    state: &mut AdamMoments,
    cfg: &AdamConfig,
    t: u64,
) -> Result<()> {
    if grad.len() != param.len() || state.m.len() != param.len() || state.v.len() != param.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_update",
            left: vec![param.len()],
            right: vec![grad.len(), state.m.len(), state.v.len()],
        });
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i] as f64;
        let m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let mhat = m / bc1;
        let vhat = v / bc2;
        param[i] = (param[i] as f64 - cfg.lr * mhat / (vhat.sqrt() + cfg.eps)) as f32;
    }
    Ok(())
}

/// Adam over a whole [`ParamStore`]. Parameters without a gradient buffer are
/// left untouched and do not advance their moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    state: Vec<AdamMoments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore<f32>) -> Self {
        Adam {
            cfg,
            step: 0,
            state: store.iter().map(|p| AdamMoments::new(p.value.numel())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<f32>) -> Result<()> {
        if self.state.len() != store.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                left: vec![self.state.len()],
                right: vec![store.len()],
            });
        }
        self.step += 1;
        for (p, st) in store.iter_mut().zip(&mut self.state) {
            if let Some(g) = &p.grad {
                adam_update(p.value.data_mut(), g, st, &self.cfg, self.step)?;
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore<f32>, max_norm: f64) -> f64 {
    let sq: f64 = store
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        store.scale_grads(max_norm / norm);
    }
    norm
}
