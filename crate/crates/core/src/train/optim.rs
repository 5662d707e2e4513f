use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::models::ParamStore;
use crate::tape::ParamGrads;
use crate::tensor::Tensor;

/// `lr0 · ½ · (1 + cos(π·t/total))` for `0 ≤ t ≤ total`.
pub fn cosine_lr(t: usize, total: usize, lr0: f32) -> Result<f32> {
    if t > total {
        return Err(Error::OutOfRange(format!("cosine_lr step {t} beyond total {total}")));
    }
    if total == 0 {
        return Ok(lr0);
    }
    Ok((lr0 as f64 * 0.5 * (1.0 + (PI * t as f64 / total as f64).cos())) as f32)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per parameter, plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

/// Fails with the first parameter whose gradient is not finite.
pub fn check_finite(grads: &ParamGrads) -> Result<()> {
    match grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        Some((name, _)) => Err(Error::NonFiniteGradient { param: name.clone() }),
        None => Ok(()),
    }
}

/// L2 norm over every gradient, accumulated in f64.
pub fn global_norm(grads: &ParamGrads) -> f64 {
    grads.values().flatten().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt()
}

/// Scales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f32) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm as f64 {
        let s = (max_norm as f64 / norm) as f32;
        for g in grads.values_mut().flatten() {
            *g *= s;
        }
    }
    norm
}

/// One bias-corrected Adam update of every parameter in `params`.
/// Parameters without a gradient are updated as if it were zero. Nothing
/// is modified when any gradient is non-finite.
pub fn adam_step(params: &mut ParamStore, grads: &ParamGrads, state: &mut AdamState, lr: f32, cfg: &AdamConfig) -> Result<()> {
    check_finite(grads)?;
    if let Some(name) = grads.keys().find(|n| params.get(n).is_none()) {
        return Err(Error::Config(format!("gradient for unknown parameter `{name}`")));
    }
    state.t += 1;
    let c1 = 1.0 - (cfg.beta1 as f64).powi(state.t as i32);
    let c2 = 1.0 - (cfg.beta2 as f64).powi(state.t as i32);
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let p = params.get(&name).expect("listed parameter");
        let n = p.len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        if m.len() != n || v.len() != n {
            return Err(Error::Config(format!("optimizer state for `{name}` has the wrong size")));
        }
        let g = grads.get(&name);
        let mut data = p.data().to_vec();
        for i in 0..n {
            let gi = g.map_or(0.0, |g| g[i]);
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = m[i] as f64 / c1;
            let vh = v[i] as f64 / c2;
            data[i] -= (lr as f64 * mh / (vh.sqrt() + cfg.eps as f64)) as f32;
        }
        let shape = p.shape();
        params.set(&name, Tensor::new(shape, data)?)?;
    }
    Ok(())
}
