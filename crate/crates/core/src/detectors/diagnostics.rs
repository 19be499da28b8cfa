//! Ground-truth diagnostics for the variance-tracking assumptions.

use nalgebra::DVector;

use super::LayerTrace;
use crate::model::RealChannel;

/// Measured counterparts of `v_t²` and `τ_t²` for one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalErrors {
    /// `‖x̂_t − x‖² / (2 n_tx)`
    pub v2: f64,
    /// `‖r_t − x‖² / (2 n_tx)`
    pub tau2: f64,
}

pub fn empirical_errors(trace: &LayerTrace, x_true: &DVector<f64>) -> Vec<EmpiricalErrors> {
    let dim = x_true.len() as f64;
    trace
        .layers
        .iter()
        .map(|l| EmpiricalErrors {
            v2: (&l.x_hat - x_true).norm_squared() / dim,
            tau2: (&l.r - x_true).norm_squared() / dim,
        })
        .collect()
}

/// Normalized correlation `(x̂ − x)ᵀ Hᵀ n / (‖x̂ − x‖ ‖Hᵀ n‖)`; zero when either norm vanishes.
pub fn orthogonality_stat(
    xhat: &DVector<f64>,
    x: &DVector<f64>,
    h: &RealChannel,
    n: &DVector<f64>,
) -> f64 {
    let q = xhat - x;
    let htn = h.matrix().transpose() * n;
    let denom = q.norm() * htn.norm();
    if denom == 0.0 {
        0.0
    } else {
        q.dot(&htn) / denom
    }
}
