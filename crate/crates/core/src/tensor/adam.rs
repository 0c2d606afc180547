use serde::{Deserialize, Serialize};

use crate::error::{Result, RocpError};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// First/second moment buffers for a list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Matrix::zeros(p.rows(), p.cols()), Matrix::zeros(p.rows(), p.cols())))
            .unzip();
        Self { step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update applied in place.
///
/// `names` label the parameters for error reporting. Nothing is modified when any
/// gradient is non-finite.
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Matrix],
    names: &[String],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(RocpError::InvalidArgument(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[k].shape() {
            return Err(RocpError::Shape {
                op: "adam_step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
        if !g.is_finite() {
            let name = names.get(k).cloned().unwrap_or_else(|| format!("#{k}"));
            return Err(RocpError::NonFiniteGradient(name));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for (((pv, &gv), mv), vv) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
            let gd = gv + cfg.weight_decay * *pv;
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gd;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gd * gd;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
