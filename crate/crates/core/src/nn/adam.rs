use super::network::{Gradients, QNetworkParams};

pub const DEFAULT_LR: f64 = 3e-4;
pub const DEFAULT_CLIP: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: DEFAULT_LR,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: DEFAULT_CLIP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &QNetworkParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.trainable().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Clips `grads` to global norm `clip` in place; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut Gradients, clip: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > clip {
        grads.scale(clip / norm);
    }
    norm
}

/// One clipped Adam update; bumps the parameter version.
pub fn adam_step(params: &mut QNetworkParams, grads: &Gradients, state: &mut AdamState, cfg: &AdamConfig) -> f64 {
    let mut g = grads.clone();
    let norm = clip_global_norm(&mut g, cfg.clip);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .trainable_mut()
        .into_iter()
        .zip(&g.tensors)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    params.version += 1;
    norm
}
