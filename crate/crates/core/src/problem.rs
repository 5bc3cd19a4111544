//! Problem data for the constrained sparse recovery model together with the
//! quantities every outer iteration reuses: the least-norm point `A^+ b`
//! (a Slater point of every reweighted subproblem) and `L = lambda_max(A A^T)`.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{lambda_max_gram, DenseMatrix};
use crate::losses::{loss_of_residual, residual_loss, validate_with_qr, LossSpec, PenaltySpec};

/// Wall-clock seconds spent on the cached quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct InstanceTimings {
    pub lambda_max: f64,
    pub qr: f64,
    pub slater: f64,
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    a: DenseMatrix,
    b: Vec<f64>,
    sigma: f64,
    loss: LossSpec,
    penalty: PenaltySpec,
    least_norm: Vec<f64>,
    lipschitz: f64,
    timings: InstanceTimings,
}

impl ProblemInstance {
    /// Validates the data and caches `A^+ b` and `lambda_max(A A^T)`.
    pub fn new(a: DenseMatrix, b: Vec<f64>, sigma: f64, loss: LossSpec, penalty: PenaltySpec) -> Result<Self> {
        let start = Instant::now();
        let (report, qr) = validate_with_qr(&a, &b, sigma, &loss)?;
        let qr_secs = start.elapsed().as_secs_f64();
        if !report.is_ok() {
            return Err(Error::Assumptions(report));
        }
        let qr = qr.expect("QR is computed whenever m <= n");

        let start = Instant::now();
        let least_norm = qr.solve_least_norm(&b)?;
        let slater_secs = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let lipschitz = match lambda_max_gram(&a) {
            Ok(l) => l,
            Err(Error::NotConverged { estimate, iterations }) => {
                log::warn!("lambda_max(AA^T) not converged after {iterations} iterations; using {estimate:e}");
                estimate
            }
            Err(e) => return Err(e),
        };
        let lambda_secs = start.elapsed().as_secs_f64();

        let inst = Self {
            a,
            b,
            sigma,
            loss,
            penalty,
            least_norm,
            lipschitz,
            timings: InstanceTimings { lambda_max: lambda_secs, qr: qr_secs, slater: slater_secs },
        };
        let c = inst.constraint_value(&inst.least_norm);
        if c > sigma {
            return Err(Error::Singular(format!("A^+ b is not feasible: constraint {c:e} > sigma {sigma:e}")));
        }
        Ok(inst)
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn loss(&self) -> &LossSpec {
        &self.loss
    }

    pub fn penalty(&self) -> &PenaltySpec {
        &self.penalty
    }

    pub fn rows(&self) -> usize {
        self.a.rows()
    }

    pub fn cols(&self) -> usize {
        self.a.cols()
    }

    /// `A^+ b`.
    pub fn least_norm(&self) -> &[f64] {
        &self.least_norm
    }

    /// `L = lambda_max(A A^T)`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn timings(&self) -> InstanceTimings {
        self.timings
    }

    /// `b - A x`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.a.residual(&self.b, x).expect("x has the instance dimension")
    }

    /// `Phi((b - Ax) o (b - Ax))`.
    pub fn constraint_value(&self, x: &[f64]) -> f64 {
        loss_of_residual(&self.loss, &self.residual(x))
    }

    pub fn checked_constraint_value(&self, x: &[f64]) -> Result<f64> {
        residual_loss(&self.loss, &self.a, &self.b, x)
    }

    /// `Psi(|x|)`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.penalty.total(x)
    }

    /// `(Phi(...) - sigma) / sigma`.
    pub fn relative_residual(&self, x: &[f64]) -> f64 {
        (self.constraint_value(x) - self.sigma) / self.sigma
    }
}
