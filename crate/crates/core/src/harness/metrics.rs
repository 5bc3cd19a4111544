use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist2, norm2};
use crate::problem::ProblemInstance;

/// Recovery threshold on the relative error.
pub const SUCCESS_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `||zeta - x_orig|| / max(||x_orig||, 1)`.
    pub recovery_error: f64,
    /// `(Phi(zeta) - sigma) / sigma`.
    pub residual: f64,
    pub success: bool,
}

pub fn compute_metrics(instance: &ProblemInstance, zeta: &[f64], x_orig: &[f64]) -> Result<Metrics> {
    if zeta.len() != instance.cols() || x_orig.len() != instance.cols() {
        return Err(Error::Dimension(format!(
            "expected vectors of length {}, got {} and {}",
            instance.cols(),
            zeta.len(),
            x_orig.len()
        )));
    }
    let recovery_error = dist2(zeta, x_orig) / norm2(x_orig).max(1.0);
    Ok(Metrics {
        recovery_error,
        residual: instance.relative_residual(zeta),
        success: recovery_error <= SUCCESS_THRESHOLD,
    })
}
