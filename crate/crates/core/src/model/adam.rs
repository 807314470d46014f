use serde::{Deserialize, Serialize};

use super::{GradSet, ModelError, ModelParams, Param};
use crate::tensor::Matrix;

/// Adam moments for every parameter matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First moments, in [`Param::ALL`] order.
    pub m: Vec<Matrix>,
    /// Second moments, in [`Param::ALL`] order.
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Matrix> = Param::ALL
            .iter()
            .map(|&p| {
                let m = params.get(p);
                Matrix::zeros(m.rows(), m.cols())
            })
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every parameter, in place.
pub fn adam_step(state: &mut AdamState, params: &mut ModelParams, grads: &GradSet, lr: f64) -> Result<(), ModelError> {
    grads.matches(params)?;
    for (i, &p) in Param::ALL.iter().enumerate() {
        if state.m[i].shape() != params.get(p).shape() || state.v[i].shape() != params.get(p).shape() {
            return Err(crate::tensor::ShapeError::new("adam_step", &state.m[i], params.get(p)).into());
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (i, &p) in Param::ALL.iter().enumerate() {
        let g = grads.get(p).data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let x = params.get_mut(p).data_mut();
        for j in 0..g.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            x[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
