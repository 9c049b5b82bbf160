use crate::error::{Error, Result};
use crate::numerics::{Gradients, Matrix, ParamSet};

/// Adam moments and step counter, one moment pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, p)| Matrix::zeros(p.rows(), p.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, followed by decoupled weight decay
/// `p ← p − lr·decay·p` on parameters marked for decay.
///
/// Any non-finite gradient aborts the step before anything is modified.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    decay: f64,
) -> Result<()> {
    for (id, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                name: params.name(id).to_string(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let decays = params.decays(id);
        let g = grads.get(id).as_slice();
        let m = state.m[id.index()].as_mut_slice();
        let v = state.v[id.index()].as_mut_slice();
        let p = params.get_mut(id).as_mut_slice();
        for i in 0..p.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
            if decays {
                p[i] -= lr * decay * p[i];
            }
        }
    }
    Ok(())
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
