use serde::{Deserialize, Serialize};

use crate::error::{bail_arg, Error, Result};
use crate::model::{NferFormerParams, ParamKind};
use crate::numerics::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 5e-4 }
    }
}

/// First and second moments per tensor, in [`NferFormerParams::tensors`]
/// order, plus the number of completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub first: Vec<Mat>,
    pub second: Vec<Mat>,
}

impl AdamWState {
    pub fn new(params: &NferFormerParams) -> Self {
        let zeros: Vec<Mat> = params.tensors().iter().map(|t| Mat::zeros(t.value.rows(), t.value.cols())).collect();
        Self { step: 0, first: zeros.clone(), second: zeros }
    }
}

/// One AdamW update with decoupled decay `θ ← θ (1 − lr · wd)` applied to
/// [`ParamKind::Weight`] tensors before the moment step.
pub fn adamw_step(
    params: &mut NferFormerParams,
    grads: &NferFormerParams,
    state: &mut AdamWState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    let grads = grads.tensors();
    if grads.len() != state.first.len() {
        bail_arg!("optimizer state holds {} tensors, gradient has {}", state.first.len(), grads.len());
    }
    for g in &grads {
        if !g.value.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", g.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(&grads).zip(&mut state.first).zip(&mut state.second) {
        if p.value.shape() != g.value.shape() {
            bail_arg!("shape mismatch for {}", p.name);
        }
        let decay = if p.kind == ParamKind::Weight { 1.0 - lr * cfg.weight_decay } else { 1.0 };
        let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
        for ((x, &gi), (mi, vi)) in p.value.data_mut().iter_mut().zip(g.value.data()).zip(moments) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *x = *x * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
