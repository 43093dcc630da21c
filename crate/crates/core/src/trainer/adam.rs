use serde::{Deserialize, Serialize};

use crate::error::{ColoError, Result};
use crate::model::ParameterSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter tensor, in sorted-name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    /// Updates applied so far.
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update of every parameter. `grads` follows the
/// parameters' sorted-name order.
pub fn adam_update(params: &mut ParameterSet<f32>, grads: &[Vec<f32>], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(ColoError::Dimension {
            op: "adam_update",
            detail: format!("{} parameters, {} gradients, {} moments", params.len(), grads.len(), state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for ((((name, p), g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if g.len() != p.numel() || m.len() != p.numel() {
            return Err(ColoError::Dimension { op: "adam_update", detail: format!("size mismatch for {name}") });
        }
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = f64::from(gi);
            let m1 = BETA1 * f64::from(*mi) + (1.0 - BETA1) * gi;
            let v1 = BETA2 * f64::from(*vi) + (1.0 - BETA2) * gi * gi;
            *mi = m1 as f32;
            *vi = v1 as f32;
            let upd = lr * (m1 / c1) / ((v1 / c2).sqrt() + ADAM_EPS);
            *x = (f64::from(*x) - upd) as f32;
        }
    }
    Ok(())
}

/// Global L2 norm of all gradients.
pub fn global_norm(grads: &[Vec<f32>]) -> f64 {
    grads.iter().flatten().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f32>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g = (f64::from(*g) * s) as f32);
    }
    norm
}
