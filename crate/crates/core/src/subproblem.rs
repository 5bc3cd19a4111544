//! One outer iteration's reweighted subproblem
//!
//! ```text
//! min ||w o x||_1   s.t.   ||A_k x - b^k||^2 <= sigma_k,     A_k = Diag(v) A,
//! ```
//!
//! the feasibility retraction `P_k`, and the inexact certificate that
//! subproblem engines hand back to the outer loop.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::problem::ProblemInstance;

/// Absolute slack allowed on the original constraint before an iterate is
/// declared infeasible.
pub const FEASIBILITY_SLACK: f64 = 1e-10;

/// Relative floor that `sigma_k` is clamped to when rounding makes it
/// nonpositive.
pub const SIGMA_K_CLAMP: f64 = 1e-15;

/// Relative tolerance for treating `||u|| = sqrt(sigma_k)` as on the sphere.
pub const SPHERE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SubproblemData<'a> {
    instance: &'a ProblemInstance,
    pub k: usize,
    /// The feasible iterate `x^k` the subproblem was built around.
    pub x_k: Vec<f64>,
    /// `w^k = Psi'_+(|x^k|)`.
    pub weights: Vec<f64>,
    /// `v^k = sqrt(Phi'_+(y^k o y^k))` with `y^k = b - A x^k`.
    pub v: Vec<f64>,
    /// `b^k = v^k o b`.
    pub b_w: Vec<f64>,
    pub sigma_k: f64,
    pub eps_k: f64,
    pub tau_k: f64,
    pub mu_k: f64,
    /// Set when rounding pushed `sigma_k` to zero or below and it was clamped.
    pub sigma_clamped: bool,
    /// `||w^k o x^k||_1`.
    pub weighted_l1_at_xk: f64,
    /// `L_bar = max_i phi'_+((b_i - a_i^T x^k)^2) * L >= lambda_max(A_k^T A_k)`.
    pub l_bar: f64,
}

impl<'a> SubproblemData<'a> {
    pub fn instance(&self) -> &'a ProblemInstance {
        self.instance
    }

    pub fn rows(&self) -> usize {
        self.b_w.len()
    }

    pub fn cols(&self) -> usize {
        self.weights.len()
    }

    /// `sqrt(sigma_k)`, the radius of the residual ball.
    pub fn bar_sigma(&self) -> f64 {
        self.sigma_k.sqrt()
    }

    /// `out = A_k x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.instance.a().mul_vec(x, out);
        for (o, vi) in out.iter_mut().zip(&self.v) {
            *o *= vi;
        }
    }

    /// `out = A_k^T y`.
    pub fn apply_t(&self, y: &[f64], out: &mut [f64]) {
        let scaled: Vec<f64> = y.iter().zip(&self.v).map(|(a, b)| a * b).collect();
        self.instance.a().mul_t_vec(&scaled, out);
    }

    /// `(out1, out2) = (A_k^T y1, A_k^T y2)`.
    pub fn apply_t2(&self, y1: &[f64], y2: &[f64], out1: &mut [f64], out2: &mut [f64]) {
        let s1: Vec<f64> = y1.iter().zip(&self.v).map(|(a, b)| a * b).collect();
        let s2: Vec<f64> = y2.iter().zip(&self.v).map(|(a, b)| a * b).collect();
        self.instance.a().mul_t_vec2(&s1, &s2, out1, out2);
    }

    /// `A_k x - b^k`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.rows()];
        self.apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(&self.b_w) {
            *ri -= bi;
        }
        r
    }

    pub fn weighted_l1(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.weights).map(|(xi, wi)| wi * xi.abs()).sum()
    }

    /// The retraction `P_k(x)`.
    pub fn retract(&self, x: &[f64]) -> Vec<f64> {
        self.retract_with_residual_norm(x, norm2(&self.residual(x))).0
    }

    /// `P_k(x)` given `||A_k x - b^k||`; also returns the weight kept on `x`
    /// (1 when `x` is already feasible).
    pub fn retract_with_residual_norm(&self, x: &[f64], res_norm: f64) -> (Vec<f64>, f64) {
        if res_norm * res_norm <= self.sigma_k {
            return (x.to_vec(), 1.0);
        }
        let theta = self.bar_sigma() / res_norm;
        let base = self.instance.least_norm();
        let out = x.iter().zip(base).map(|(xi, bi)| (1.0 - theta) * bi + theta * xi).collect();
        (out, theta)
    }

    /// `||w o P_k(x)||_1` without materializing `P_k(x)`.
    pub fn retracted_weighted_l1(&self, x: &[f64], res_norm: f64) -> f64 {
        if res_norm * res_norm <= self.sigma_k {
            return self.weighted_l1(x);
        }
        let theta = self.bar_sigma() / res_norm;
        x.iter()
            .zip(self.instance.least_norm())
            .zip(&self.weights)
            .map(|((xi, bi), wi)| wi * ((1.0 - theta) * bi + theta * xi).abs())
            .sum()
    }

    /// The controlled-descent test `||w o P_k(x)||_1 <= ||w o x^k||_1 + mu_k`.
    pub fn descent_ok(&self, x: &[f64], res_norm: f64) -> bool {
        self.retracted_weighted_l1(x, res_norm) <= self.weighted_l1_at_xk + self.mu_k
    }

    /// `dist(0, w o d||x||_1 + A_k^T N(u))` with `N` the normal cone of
    /// `{||u||^2 <= sigma_k}` at `u`; also returns the minimizing cone scale.
    ///
    /// `atu` must be `A_k^T u`.
    pub fn kkt_distance(&self, x: &[f64], u: &[f64], atu: &[f64]) -> (f64, f64) {
        let on_sphere = norm2(u) >= self.bar_sigma() * (1.0 - SPHERE_TOLERANCE);
        kkt_distance(&self.weights, x, atu, on_sphere)
    }

    /// Builds the certificate for a candidate pair `(x, u)`.
    pub fn certify(&self, x: Vec<f64>, u: Vec<f64>, multiplier: f64) -> InexactCertificate {
        let r = self.residual(&x);
        let res_norm = norm2(&r);
        let coupling: Vec<f64> = r.iter().zip(&u).map(|(a, b)| a - b).collect();
        let mut atu = vec![0.0; self.cols()];
        self.apply_t(&u, &mut atu);
        let (kkt, _) = self.kkt_distance(&x, &u, &atu);
        let descent_ok = self.descent_ok(&x, res_norm);
        InexactCertificate {
            x_tilde: x,
            u_tilde: u,
            multiplier,
            kkt_residual: kkt,
            coupling_residual: norm2(&coupling),
            descent_ok,
            residual_norm: res_norm,
        }
    }
}

/// Exact distance from the origin to `{w o s + c g : s in d||x||_1, c in C}`
/// where `C = [0, inf)` when `cone` holds and `C = {0}` otherwise.
///
/// The squared distance is a convex piecewise quadratic in `c`; its
/// derivative is piecewise linear with breakpoints `w_i / |g_i|` at the zero
/// coordinates, so the minimizer is found by one sorted sweep.
pub fn kkt_distance(w: &[f64], x: &[f64], g: &[f64], cone: bool) -> (f64, f64) {
    let eval = |c: f64| -> f64 {
        x.iter()
            .zip(w)
            .zip(g)
            .map(|((&xi, &wi), &gi)| {
                let d = if xi != 0.0 { wi * xi.signum() + c * gi } else { ((c * gi).abs() - wi).max(0.0) };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };
    if !cone {
        return (eval(0.0), 0.0);
    }
    let mut denom = 0.0;
    let mut numer = 0.0;
    let mut breaks = Vec::new();
    for ((&xi, &wi), &gi) in x.iter().zip(w).zip(g) {
        if xi != 0.0 {
            denom += gi * gi;
            numer -= gi * wi * xi.signum();
        } else if gi != 0.0 {
            breaks.push((wi / gi.abs(), gi.abs(), wi));
        }
    }
    // Half-derivative at c = 0 is -numer.
    if numer <= 0.0 {
        return (eval(0.0), 0.0);
    }
    breaks.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut c = f64::INFINITY;
    for &(t, ga, wa) in &breaks {
        if denom > 0.0 && numer / denom <= t {
            c = numer / denom;
            break;
        }
        denom += ga * ga;
        numer += ga * wa;
    }
    if !c.is_finite() {
        c = numer / denom;
    }
    (eval(c), c)
}

/// What a subproblem engine returns for one outer iteration.
#[derive(Debug, Clone, Serialize)]
pub struct InexactCertificate {
    pub x_tilde: Vec<f64>,
    pub u_tilde: Vec<f64>,
    /// Scale of `A_k^T u` in the approximate KKT system (`lambda_tilde_k`).
    pub multiplier: f64,
    /// `dist(0, w o d||x||_1 + A_k^T N(u))`.
    pub kkt_residual: f64,
    /// `||A_k x - b^k - u||`.
    pub coupling_residual: f64,
    /// `||w o P_k(x)||_1 <= ||w o x^k||_1 + mu_k`.
    pub descent_ok: bool,
    /// `||A_k x - b^k||`.
    pub residual_norm: f64,
}

impl InexactCertificate {
    /// All three acceptance conditions at tolerance `eps`.
    pub fn satisfies(&self, eps: f64, sigma_k: f64) -> bool {
        self.kkt_residual <= eps
            && self.coupling_residual <= eps
            && self.descent_ok
            && norm2(&self.u_tilde) <= sigma_k.sqrt() * (1.0 + SPHERE_TOLERANCE) + 1e-12
    }
}

/// Step-1 quantities around a feasible `x_k`.
pub fn build_subproblem<'a>(
    instance: &'a ProblemInstance,
    x_k: &[f64],
    k: usize,
    tau_k: f64,
    mu_k: f64,
    eps_fraction: f64,
) -> Result<SubproblemData<'a>> {
    if x_k.len() != instance.cols() {
        return Err(Error::Dimension(format!("x_k has length {}, expected {}", x_k.len(), instance.cols())));
    }
    if !(tau_k > 0.0 && mu_k > 0.0) {
        return Err(Error::Precondition(format!("tau_k = {tau_k} and mu_k = {mu_k} must be positive")));
    }
    if !(eps_fraction > 0.0 && eps_fraction <= 1.0) {
        return Err(Error::Precondition(format!("eps_fraction {eps_fraction} must lie in (0, 1]")));
    }
    let loss = instance.loss();
    let sigma = instance.sigma();
    let y = instance.residual(x_k);
    let phi_y: f64 = y.iter().map(|yi| loss.value(yi * yi)).sum();
    if phi_y > sigma + FEASIBILITY_SLACK {
        return Err(Error::Precondition(format!(
            "x_k is infeasible: constraint value {phi_y:e} exceeds sigma {sigma:e}"
        )));
    }
    let dphi: Vec<f64> = y.iter().map(|yi| loss.derivative(yi * yi)).collect();
    let v: Vec<f64> = dphi.iter().map(|d| d.sqrt()).collect();
    let b_w: Vec<f64> = v.iter().zip(instance.b()).map(|(vi, bi)| vi * bi).collect();
    // ||b^k - A_k x^k||^2 = sum_i phi'_+(y_i^2) y_i^2
    let weighted_sq: f64 = dphi.iter().zip(&y).map(|(d, yi)| d * yi * yi).sum();
    let mut sigma_k = sigma + weighted_sq - phi_y;
    let mut sigma_clamped = false;
    if !(sigma_k > 0.0) {
        log::warn!("sigma_k = {sigma_k:e} at k = {k} from rounding; clamping to {:e}", SIGMA_K_CLAMP * sigma);
        sigma_k = SIGMA_K_CLAMP * sigma;
        sigma_clamped = true;
    }
    let eps_k = eps_fraction * sigma_k.min(sigma_k.sqrt()).min(tau_k);
    let weights = instance.penalty().weights(x_k);
    let weighted_l1_at_xk = x_k.iter().zip(&weights).map(|(xi, wi)| wi * xi.abs()).sum();
    let max_d = dphi.iter().fold(0.0f64, |m, d| m.max(*d));
    let l_bar = max_d * instance.lipschitz();
    Ok(SubproblemData {
        instance,
        k,
        x_k: x_k.to_vec(),
        weights,
        v,
        b_w,
        sigma_k,
        eps_k,
        tau_k,
        mu_k,
        sigma_clamped,
        weighted_l1_at_xk,
        l_bar,
    })
}

/// `dist` between `P_k(x)` and `x` relative to the bound
/// `(eps_k / sqrt(sigma_k)) ||A^+ b - x||` certified engines must respect.
pub fn displacement_bound(sub: &SubproblemData<'_>, x_tilde: &[f64]) -> f64 {
    let base = sub.instance().least_norm();
    let d: f64 = base.iter().zip(x_tilde).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    sub.eps_k / sub.bar_sigma() * d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::losses::{LossSpec, PenaltySpec};

    fn one_by_one() -> ProblemInstance {
        ProblemInstance::new(
            DenseMatrix::new(1, 1, vec![1.0]).unwrap(),
            vec![2.0],
            1.0,
            LossSpec::cauchy(1.0).unwrap(),
            PenaltySpec::log(0.1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn sigma_k_one_dimensional() {
        let inst = one_by_one();
        // phi(1) = log 2 <= 1, so x_k = 1 is feasible.
        let sub = build_subproblem(&inst, &[1.0], 0, 0.2, 1.0 / 1.2, 1.0).unwrap();
        let want = 1.0 + 0.5 - 2f64.ln();
        assert!((sub.sigma_k - want).abs() < 1e-15, "{}", sub.sigma_k);
        assert!((sub.sigma_k - 0.806_852_819_440_054_7).abs() < 1e-12);
        assert!((sub.v[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((sub.b_w[0] - 2.0 * 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(sub.eps_k, 0.2);
    }

    #[test]
    fn sigma_k_equals_sigma_at_interpolation() {
        let inst = one_by_one();
        let sub = build_subproblem(&inst, &[2.0], 3, 1e-3, 1e-3, 1.0).unwrap();
        assert_eq!(sub.sigma_k, 1.0);
        assert!(!sub.sigma_clamped);
    }

    #[test]
    fn weights_at_origin() {
        let a = DenseMatrix::new(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let inst = ProblemInstance::new(a, vec![0.3], 0.2, LossSpec::cauchy(0.5).unwrap(), PenaltySpec::log(0.1).unwrap()).unwrap();
        // x = 0 is feasible only if sigma >= phi(b^2); use A^+ b shifted to keep a zero entry.
        let sub = build_subproblem(&inst, &[0.3, 0.0, 0.0], 0, 0.1, 0.1, 1.0).unwrap();
        assert!((sub.weights[1] - 10.0).abs() < 1e-12 && (sub.weights[2] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_infeasible_iterate() {
        let inst = one_by_one();
        assert!(matches!(build_subproblem(&inst, &[0.0], 0, 0.1, 0.1, 1.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn retraction_branches() {
        let inst = one_by_one();
        let sub = build_subproblem(&inst, &[2.0], 0, 0.1, 0.1, 1.0).unwrap();
        // Feasible for the subproblem: |1.5 - 2| ^ 2 * v^2 <= 1.
        assert_eq!(sub.retract(&[1.5]), vec![1.5]);
        // ||A_k x - b^k|| = 2 sqrt(sigma_k) gives the midpoint with A^+ b.
        let v = sub.v[0];
        let x = 2.0 - 2.0 * sub.bar_sigma() / v;
        let p = sub.retract(&[x]);
        assert!((p[0] - 0.5 * (2.0 + x)).abs() < 1e-14);
    }

    #[test]
    fn kkt_distance_sweep() {
        // Support coordinate demands c = 2; zero coordinate activates at c = 1.
        let w = [1.0, 1.0];
        let x = [1.0, 0.0];
        let g = [-0.5, 1.0];
        let (d, c) = kkt_distance(&w, &x, &g, true);
        // f(c) = (1 - c/2)^2 + max(c - 1, 0)^2, minimized at c = 6/5.
        assert!((c - 1.2).abs() < 1e-14);
        assert!((d - (0.16f64 + 0.04).sqrt()).abs() < 1e-14);
        let (d0, c0) = kkt_distance(&w, &x, &g, false);
        assert_eq!(c0, 0.0);
        assert!((d0 - 1.0).abs() < 1e-15);
        let (dz, _) = kkt_distance(&w, &[0.0, 0.0], &g, true);
        assert_eq!(dz, 0.0);
    }
}
