//! Concave loss functions for the residual constraint, the log sparsity
//! penalty, their right derivatives, and the aggregate forms used by the
//! constrained model
//!
//! ```text
//! min  sum_i psi(|x_i|)   s.t.   sum_i phi((b_i - a_i^T x)^2) <= sigma
//! ```
//!
//! Every `phi` here takes the *squared* residual as argument. Right
//! derivatives at `t = 0` are the analytic limits, never finite differences.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, QrOfTranspose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Cauchy,
    GemanMcClure,
    Welsh,
    PseudoHuber,
    Huber,
    TukeyBiweight,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Cauchy,
        LossKind::GemanMcClure,
        LossKind::Welsh,
        LossKind::PseudoHuber,
        LossKind::Huber,
        LossKind::TukeyBiweight,
    ];

    /// Huber and Tukey switch formulas at `sqrt(t) = delta`.
    pub fn is_piecewise(self) -> bool {
        matches!(self, LossKind::Huber | LossKind::TukeyBiweight)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LossKind::Cauchy => "cauchy",
            LossKind::GemanMcClure => "geman-mcclure",
            LossKind::Welsh => "welsh",
            LossKind::PseudoHuber => "pseudo-huber",
            LossKind::Huber => "huber",
            LossKind::TukeyBiweight => "tukey-biweight",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cauchy" => Ok(LossKind::Cauchy),
            "geman-mcclure" | "gemanmcclure" | "gm" => Ok(LossKind::GemanMcClure),
            "welsh" => Ok(LossKind::Welsh),
            "pseudo-huber" | "pseudohuber" => Ok(LossKind::PseudoHuber),
            "huber" => Ok(LossKind::Huber),
            "tukey" | "tukey-biweight" | "tukeybiweight" => Ok(LossKind::TukeyBiweight),
            other => Err(Error::Invalid(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// A concave loss `phi` of the squared residual with scale `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    kind: LossKind,
    delta: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Domain(format!("loss scale delta must be positive, got {delta}")));
        }
        Ok(Self { kind, delta })
    }

    pub fn cauchy(delta: f64) -> Result<Self> {
        Self::new(LossKind::Cauchy, delta)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `phi(t)` for `t >= 0`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        check_nonnegative(t)?;
        Ok(self.value(t))
    }

    /// Right derivative `phi'_+(t)` for `t >= 0`.
    pub fn dplus(&self, t: f64) -> Result<f64> {
        check_nonnegative(t)?;
        Ok(self.derivative(t))
    }

    /// `sup_{t >= 0} phi(t)`; `f64::INFINITY` for the unbounded kinds.
    pub fn sup(&self) -> f64 {
        let d2 = self.delta * self.delta;
        match self.kind {
            LossKind::Cauchy | LossKind::PseudoHuber | LossKind::Huber => f64::INFINITY,
            LossKind::GemanMcClure => 2.0,
            LossKind::Welsh => 1.0,
            LossKind::TukeyBiweight => d2 / 6.0,
        }
    }

    // Unchecked kernels: callers guarantee `t >= 0` (squares of residuals).
    pub(crate) fn value(&self, t: f64) -> f64 {
        let d = self.delta;
        let d2 = d * d;
        match self.kind {
            LossKind::Cauchy => (t / d2).ln_1p(),
            LossKind::GemanMcClure => 2.0 * t / (t + 4.0 * d2),
            LossKind::Welsh => -(-t / (2.0 * d2)).exp_m1(),
            LossKind::PseudoHuber => (1.0 + t / d2).sqrt() - 1.0,
            LossKind::Huber => {
                if t.sqrt() <= d {
                    0.5 * t
                } else {
                    d * (t.sqrt() - 0.5 * d)
                }
            }
            LossKind::TukeyBiweight => {
                if t.sqrt() <= d {
                    let c = 1.0 - t / d2;
                    d2 / 6.0 * (1.0 - c * c * c)
                } else {
                    d2 / 6.0
                }
            }
        }
    }

    pub(crate) fn derivative(&self, t: f64) -> f64 {
        let d = self.delta;
        let d2 = d * d;
        match self.kind {
            LossKind::Cauchy => 1.0 / (d2 + t),
            LossKind::GemanMcClure => {
                let s = t + 4.0 * d2;
                8.0 * d2 / (s * s)
            }
            LossKind::Welsh => (-t / (2.0 * d2)).exp() / (2.0 * d2),
            LossKind::PseudoHuber => 0.5 / (d2 * (1.0 + t / d2).sqrt()),
            LossKind::Huber => {
                if t.sqrt() <= d {
                    0.5
                } else {
                    0.5 * d / t.sqrt()
                }
            }
            LossKind::TukeyBiweight => {
                if t.sqrt() <= d {
                    let c = 1.0 - t / d2;
                    0.5 * c * c
                } else {
                    0.0
                }
            }
        }
    }
}

/// The log penalty `psi(t) = log(1 + t / epsilon)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    epsilon: f64,
}

impl PenaltySpec {
    pub fn log(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!("penalty epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        check_nonnegative(t)?;
        Ok(self.value(t))
    }

    pub fn dplus(&self, t: f64) -> Result<f64> {
        check_nonnegative(t)?;
        Ok(self.derivative(t))
    }

    pub(crate) fn value(&self, t: f64) -> f64 {
        (t / self.epsilon).ln_1p()
    }

    pub(crate) fn derivative(&self, t: f64) -> f64 {
        1.0 / (self.epsilon + t)
    }

    /// `Psi(|x|) = sum_i psi(|x_i|)`.
    pub fn total(&self, x: &[f64]) -> f64 {
        x.iter().map(|xi| self.value(xi.abs())).sum()
    }

    /// `Psi'_+(|x|)`, the reweighting vector.
    pub fn weights(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|xi| self.derivative(xi.abs())).collect()
    }
}

fn check_nonnegative(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("argument must be nonnegative, got {t}")))
    }
}

/// `Phi(v) = sum_i phi(v_i)` applied to the squared entries of `r`.
pub fn loss_of_residual(loss: &LossSpec, r: &[f64]) -> f64 {
    r.iter().map(|ri| loss.value(ri * ri)).sum()
}

/// `Phi((b - Ax) o (b - Ax))`.
pub fn residual_loss(loss: &LossSpec, a: &DenseMatrix, b: &[f64], x: &[f64]) -> Result<f64> {
    let r = a.residual(b, x)?;
    Ok(loss_of_residual(loss, &r))
}

/// Gradient of `x -> Phi((b - Ax) o (b - Ax))`:
/// `-2 sum_i phi'_+((b_i - a_i^T x)^2) (b_i - a_i^T x) a_i`.
pub fn residual_loss_grad(loss: &LossSpec, a: &DenseMatrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let r = a.residual(b, x)?;
    let scaled: Vec<f64> = r.iter().map(|ri| -2.0 * loss.derivative(ri * ri) * ri).collect();
    let mut g = vec![0.0; a.cols()];
    a.mul_t_vec(&scaled, &mut g);
    Ok(g)
}

/// One violated clause of the standing assumptions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AssumptionViolation {
    /// The model needs `m <= n` for `A` to have full row rank.
    MoreRowsThanColumns { rows: usize, cols: usize },
    /// Smallest to largest `|R_ii|` ratio of `QR(A^T)`.
    RankDeficient { diag_ratio: f64 },
    /// `sigma` outside `(0, sum_i phi(b_i^2))`.
    SigmaOutOfRange { sigma: f64, upper: f64 },
    /// `sigma` too close to `k * sup(phi)`.
    SigmaNearLossMultiple { sigma: f64, k: usize, sup: f64 },
}

impl fmt::Display for AssumptionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssumptionViolation::MoreRowsThanColumns { rows, cols } => {
                write!(f, "A must have full row rank but is {rows}x{cols} with m > n")
            }
            AssumptionViolation::RankDeficient { diag_ratio } => write!(
                f,
                "A has full row rank violated (min/max |R_ii| of QR(A^T) = {diag_ratio:e})"
            ),
            AssumptionViolation::SigmaOutOfRange { sigma, upper } => {
                write!(f, "σ ∈ (0, ∑φ(b_i²)) violated: σ = {sigma:e}, ∑φ(b_i²) = {upper:e}")
            }
            AssumptionViolation::SigmaNearLossMultiple { sigma, k, sup } => write!(
                f,
                "σ ∉ {{kφ̄ : k = 1,…,m}} violated: σ = {sigma:e} is within tolerance of {k}·φ̄ (φ̄ = {sup:e})"
            ),
        }
    }
}

/// Outcome of checking the problem data against the standing assumptions.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<AssumptionViolation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("all assumptions hold");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Relative threshold on `min |R_ii| / max |R_ii|` below which `A` is
/// treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Relative gap (in units of `sup(phi)`) that `sigma` must keep from every
/// multiple `k * sup(phi)`.
pub const SUP_MULTIPLE_TOLERANCE: f64 = 1e-12;

/// Checks full row rank of `A`, `0 < sigma < sum_i phi(b_i^2)`, and that
/// `sigma` avoids `{k * sup(phi) : k = 1..m}`.
pub fn validate_assumptions(a: &DenseMatrix, b: &[f64], sigma: f64, loss: &LossSpec) -> Result<ValidationReport> {
    validate_with_qr(a, b, sigma, loss).map(|(report, _)| report)
}

pub(crate) fn validate_with_qr(
    a: &DenseMatrix,
    b: &[f64],
    sigma: f64,
    loss: &LossSpec,
) -> Result<(ValidationReport, Option<QrOfTranspose>)> {
    if b.len() != a.rows() {
        return Err(Error::Dimension(format!("b has length {} but A has {} rows", b.len(), a.rows())));
    }
    let mut report = ValidationReport::default();
    let (m, n) = (a.rows(), a.cols());
    let mut qr = None;
    if m > n {
        report.violations.push(AssumptionViolation::MoreRowsThanColumns { rows: m, cols: n });
    } else {
        let f = QrOfTranspose::new(a);
        let ratio = f.diag_ratio();
        if !(ratio > RANK_TOLERANCE) {
            report.violations.push(AssumptionViolation::RankDeficient { diag_ratio: ratio });
        }
        qr = Some(f);
    }

    let upper = loss_of_residual(loss, b);
    if !(sigma > 0.0 && sigma < upper) {
        report.violations.push(AssumptionViolation::SigmaOutOfRange { sigma, upper });
    }

    let sup = loss.sup();
    if sup.is_finite() {
        let tol = SUP_MULTIPLE_TOLERANCE * sup;
        if let Some(k) = (1..=m).find(|&k| (sigma - k as f64 * sup).abs() <= tol) {
            report.violations.push(AssumptionViolation::SigmaNearLossMultiple { sigma, k, sup });
        }
    }
    Ok((report, qr))
}
