//! Pareto-curve root finding for the weighted BPDN subproblem.
//!
//! `phi(tau) = min { ||A_k x - b^k|| : ||w o x||_1 <= tau }` is convex and
//! nonincreasing; the subproblem solution sits at `phi(tau) = sigma_bar`.
//! Each evaluation of `phi` is a weighted LASSO solved by spectral projected
//! gradient with a nonmonotone line search.

use serde::{Deserialize, Serialize};

use crate::dir::{EngineMode, EngineOutput, SubproblemEngine};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, project_weighted_l1_ball_with_multiplier};
use crate::subproblem::{InexactCertificate, SubproblemData};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpgConfig {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub nonmonotone_memory: usize,
    pub armijo_const: f64,
    /// Relative LASSO tolerance in black-box mode.
    pub lasso_tol: f64,
    /// Starting LASSO tolerance in certified mode.
    pub certified_lasso_tol: f64,
    /// Tolerance tightenings (by 10x) allowed in certified mode.
    pub max_escalations: usize,
    pub max_newton: usize,
    pub max_spg_per_lasso: usize,
    /// Relative Newton root tolerance on `|phi(tau) - sigma_bar|`.
    pub root_tol: f64,
}

impl Default for SpgConfig {
    fn default() -> Self {
        Self {
            alpha_min: 1e-10,
            alpha_max: 1e10,
            nonmonotone_memory: 10,
            armijo_const: 1e-4,
            lasso_tol: 1e-6,
            certified_lasso_tol: 1e-9,
            max_escalations: 4,
            max_newton: 50,
            max_spg_per_lasso: 20_000,
            root_tol: 1e-6,
        }
    }
}

/// Weighted dual norm `max_i |z_i| / w_i`.
pub fn weighted_dual_norm(z: &[f64], w: &[f64]) -> f64 {
    z.iter().zip(w).fold(0.0f64, |m, (zi, wi)| m.max(zi.abs() / wi))
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub x: Vec<f64>,
    /// `A_k x - b^k`.
    pub residual: Vec<f64>,
    /// `A_k^T (A_k x - b^k)`.
    pub gradient: Vec<f64>,
    /// Scalar `lambda` with `0 in A_k^T r + lambda w o d||x||_1`.
    pub multiplier: f64,
    /// `||x - P(x - gradient)||`.
    pub fixed_point_residual: f64,
    pub relative_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LassoSolution {
    pub fn residual_norm(&self) -> f64 {
        norm2(&self.residual)
    }
}

/// When to stop the LASSO solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoTolerance {
    pub tol: f64,
    /// Also accept a small relative duality gap.
    pub use_gap: bool,
    /// Loosen the gap test to the relative distance between `||r||` and
    /// this target, so LASSOs far from the Pareto root are solved cheaply.
    pub root_target: Option<f64>,
}

impl LassoTolerance {
    fn gap_threshold(&self, res_norm: f64) -> f64 {
        match self.root_target {
            Some(t) => self.tol.max((res_norm - t).abs() / res_norm.max(1.0)),
            None => self.tol,
        }
    }
}

fn evaluate(sub: &SubproblemData<'_>, x: &[f64], r: &mut [f64], g: &mut [f64]) -> f64 {
    sub.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(&sub.b_w) {
        *ri -= bi;
    }
    sub.apply_t(r, g);
    0.5 * dot(r, r)
}

/// Unit-step fixed-point residual and the projection multiplier there.
fn optimality(x: &[f64], g: &[f64], w: &[f64], tau: f64) -> (f64, f64) {
    let y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    let (p, theta) = project_weighted_l1_ball_with_multiplier(&y, w, tau);
    let d = x.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    (d, theta)
}

/// `||r||^2 - b^T rho + tau ||A^T rho||_{w*}` with `rho = -r`, over `max(1, f)`.
fn relative_gap(sub: &SubproblemData<'_>, r: &[f64], g: &[f64], tau: f64, f: f64) -> f64 {
    let gap = dot(r, r) + dot(&sub.b_w, r) + tau * weighted_dual_norm(g, &sub.weights);
    gap.abs() / f.max(1.0)
}

/// Approximately minimizes `0.5 ||A_k x - b^k||^2` over `||w o x||_1 <= tau`.
pub fn spg_lasso(sub: &SubproblemData<'_>, tau: f64, warm: &[f64], cfg: &SpgConfig, tol: LassoTolerance) -> Result<LassoSolution> {
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("tau must be nonnegative, got {tau}")));
    }
    if warm.len() != sub.cols() {
        return Err(Error::Dimension(format!("warm start has length {}, expected {}", warm.len(), sub.cols())));
    }
    let (m, n) = (sub.rows(), sub.cols());
    let w = &sub.weights;
    let (mut x, _) = project_weighted_l1_ball_with_multiplier(warm, w, tau);
    let mut r = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut f = evaluate(sub, &x, &mut r, &mut g);
    let mut alpha = if sub.l_bar > 0.0 { 1.0 / sub.l_bar } else { 1.0 }.clamp(cfg.alpha_min, cfg.alpha_max);
    let memory = cfg.nonmonotone_memory.max(1);
    let mut history = vec![f; memory];
    let mut x_new = vec![0.0; n];
    let mut r_new = vec![0.0; m];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = false;
    let (mut fpr, mut theta) = optimality(&x, &g, w, tau);
    let mut rgap = relative_gap(sub, &r, &g, tau, f);

    while iterations < cfg.max_spg_per_lasso {
        if fpr <= tol.tol * norm2(&x).max(1.0) || (tol.use_gap && rgap <= tol.gap_threshold(norm2(&r))) {
            converged = true;
            break;
        }
        if stalled {
            break;
        }
        let f_ref = history.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut step = alpha;
        let mut accepted = false;
        for _ in 0..60 {
            let y: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let (p, _) = project_weighted_l1_ball_with_multiplier(&y, w, tau);
            x_new.copy_from_slice(&p);
            let f_new = evaluate(sub, &x_new, &mut r_new, &mut g_new);
            let descent: f64 = g.iter().zip(&x_new).zip(&x).map(|((gi, a), b)| gi * (a - b)).sum();
            if f_new <= f_ref + cfg.armijo_const * descent {
                accepted = true;
                f = f_new;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            stalled = true;
            continue;
        }
        let mut sts = 0.0;
        let mut sty = 0.0;
        for j in 0..n {
            let s = x_new[j] - x[j];
            sts += s * s;
            sty += s * (g_new[j] - g[j]);
        }
        if sts == 0.0 {
            stalled = true;
        }
        alpha = if sty <= 0.0 { cfg.alpha_max } else { (sts / sty).clamp(cfg.alpha_min, cfg.alpha_max) };
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut r, &mut r_new);
        std::mem::swap(&mut g, &mut g_new);
        history[iterations % memory] = f;
        (fpr, theta) = optimality(&x, &g, w, tau);
        rgap = relative_gap(sub, &r, &g, tau, f);
    }
    if !converged {
        log::debug!("LASSO at tau = {tau:e} stopped after {iterations} steps (fixed-point residual {fpr:e})");
    }
    Ok(LassoSolution {
        x,
        residual: r,
        gradient: g,
        multiplier: theta,
        fixed_point_residual: fpr,
        relative_gap: rgap,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonRecord {
    pub tau: f64,
    pub phi: f64,
    pub slope: f64,
    pub lasso_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpgState {
    pub tau: f64,
    pub x_lasso: Vec<f64>,
    pub sigma_bar: f64,
    /// Newton trajectory of the latest solve.
    pub history: Vec<NewtonRecord>,
    /// Outer index of the last solve that exhausted its escalations.
    pub failed_at: Option<usize>,
}

impl SpgState {
    pub fn new(n: usize) -> Self {
        Self { tau: 0.0, x_lasso: vec![0.0; n], sigma_bar: 0.0, history: Vec::new(), failed_at: None }
    }
}

/// Root tolerance on `|phi - sigma_bar|`.
fn root_tolerance(sub: &SubproblemData<'_>, cfg: &SpgConfig, mode: EngineMode) -> f64 {
    let bar_sigma = sub.bar_sigma();
    let slack = 64.0 * f64::EPSILON * norm2(&sub.b_w).max(1.0);
    let base = cfg.root_tol * bar_sigma;
    match mode {
        EngineMode::Blackbox => base.max(slack),
        EngineMode::Certified => base.min(0.5 * sub.eps_k).max(slack),
    }
}

/// The certificate for a LASSO point: `u` is the residual scaled onto the
/// sphere of radius `sigma_bar`.
fn certificate(sub: &SubproblemData<'_>, sol: &LassoSolution) -> InexactCertificate {
    let bar_sigma = sub.bar_sigma();
    let rn = sol.residual_norm();
    let u: Vec<f64> = if rn > 0.0 { sol.residual.iter().map(|ri| bar_sigma * ri / rn).collect() } else { sol.residual.clone() };
    let multiplier = if sol.multiplier > 0.0 { rn / (bar_sigma * sol.multiplier) } else { 0.0 };
    let mut cert = sub.certify(sol.x.clone(), u, multiplier);
    if sol.multiplier <= 0.0 {
        let mut atu = vec![0.0; sub.cols()];
        sub.apply_t(&cert.u_tilde, &mut atu);
        cert.multiplier = sub.kkt_distance(&cert.x_tilde, &cert.u_tilde, &atu).1;
    }
    cert
}

/// Newton iteration on the Pareto curve starting from `tau = 0`.
///
/// Returns the certificate and the total number of SPG steps.
pub fn pareto_newton(
    sub: &SubproblemData<'_>,
    state: &mut SpgState,
    cfg: &SpgConfig,
    mode: EngineMode,
) -> Result<(InexactCertificate, usize)> {
    let bar_sigma = sub.bar_sigma();
    let b_norm = norm2(&sub.b_w);
    if b_norm <= bar_sigma {
        return Err(Error::Precondition(format!(
            "||b^k|| = {b_norm:e} does not exceed sqrt(sigma_k) = {bar_sigma:e}; x = 0 is feasible"
        )));
    }
    if state.x_lasso.len() != sub.cols() {
        *state = SpgState::new(sub.cols());
    }
    state.sigma_bar = bar_sigma;
    state.history.clear();
    let root_tol = root_tolerance(sub, cfg, mode);
    let (mut tol, use_gap, escalations) = match mode {
        EngineMode::Blackbox => (cfg.lasso_tol, true, 0),
        EngineMode::Certified => (cfg.certified_lasso_tol, false, cfg.max_escalations),
    };
    // A retry of a subproblem that already failed starts from the tightest level.
    let mut level = 0;
    if mode == EngineMode::Certified && state.failed_at == Some(sub.k) {
        level = escalations;
        tol *= 0.1f64.powi(level as i32);
    }

    let mut tau = 0.0f64;
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    let mut total = 0;
    let mut newton = 0;
    let mut sol;
    loop {
        let warm = if tau == 0.0 { vec![0.0; sub.cols()] } else { state.x_lasso.clone() };
        let root_target = use_gap.then_some(bar_sigma);
        sol = spg_lasso(sub, tau, &warm, cfg, LassoTolerance { tol, use_gap, root_target })?;
        total += sol.iterations;
        let phi = sol.residual_norm();
        let slope = if phi > 0.0 { -weighted_dual_norm(&sol.gradient, &sub.weights) / phi } else { 0.0 };
        state.history.push(NewtonRecord { tau, phi, slope, lasso_iterations: sol.iterations });
        state.x_lasso.clone_from(&sol.x);
        state.tau = tau;

        let close = (phi - bar_sigma).abs() <= root_tol;
        if close || newton >= cfg.max_newton {
            if mode == EngineMode::Blackbox {
                break;
            }
            let cert = certificate(sub, &sol);
            if cert.satisfies(sub.eps_k, sub.sigma_k) {
                state.failed_at = None;
                return Ok((cert, total));
            }
            if level >= escalations {
                state.failed_at = Some(sub.k);
                return Ok((cert, total));
            }
            level += 1;
            tol *= 0.1;
            newton = 0;
            log::debug!("k = {}: tightening LASSO tolerance to {tol:e}", sub.k);
            continue;
        }
        newton += 1;
        if phi > bar_sigma {
            lo = lo.max(tau);
        } else {
            hi = hi.min(tau);
        }
        let mut next = if slope < 0.0 { tau + (bar_sigma - phi) / slope } else { f64::NAN };
        if !(next.is_finite() && next > lo && next < hi) {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * tau.max(lo).max(1e-12) };
        }
        tau = next;
    }
    Ok((certificate(sub, &sol), total))
}

/// The SPG engine; black-box mode applies no certificate checks.
#[derive(Debug, Clone)]
pub struct SpgEngine {
    cfg: SpgConfig,
    mode: EngineMode,
    state: Option<SpgState>,
}

impl SpgEngine {
    pub fn new(cfg: SpgConfig, mode: EngineMode) -> Self {
        Self { cfg, mode, state: None }
    }

    pub fn state(&self) -> Option<&SpgState> {
        self.state.as_ref()
    }
}

impl SubproblemEngine for SpgEngine {
    fn name(&self) -> &str {
        match self.mode {
            EngineMode::Certified => "spg",
            EngineMode::Blackbox => "spg-blackbox",
        }
    }

    fn mode(&self) -> EngineMode {
        self.mode
    }

    fn solve(&mut self, sub: &SubproblemData<'_>) -> Result<EngineOutput> {
        let state = self.state.get_or_insert_with(|| SpgState::new(sub.cols()));
        let (certificate, inner_iterations) = pareto_newton(sub, state, &self.cfg, self.mode)?;
        Ok(EngineOutput { certificate, inner_iterations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::losses::{LossSpec, PenaltySpec};
    use crate::problem::ProblemInstance;
    use crate::subproblem::build_subproblem;

    fn instance() -> ProblemInstance {
        ProblemInstance::new(
            DenseMatrix::new(1, 1, vec![1.0]).unwrap(),
            vec![2.0],
            1.0,
            LossSpec::cauchy(1.0).unwrap(),
            PenaltySpec::log(1.0).unwrap(),
        )
        .unwrap()
    }

    /// `A_k = [1]`, `b^k = 2`, `w = 1`, `sigma_bar = 1`.
    fn analytic(inst: &ProblemInstance) -> SubproblemData<'_> {
        let mut sub = build_subproblem(inst, &[2.0], 0, 0.2, 0.5, 1.0).unwrap();
        sub.v = vec![1.0];
        sub.b_w = vec![2.0];
        sub.weights = vec![1.0];
        sub.sigma_k = 1.0;
        sub.l_bar = 1.0;
        sub
    }

    const TIGHT: LassoTolerance = LassoTolerance { tol: 1e-12, use_gap: false, root_target: None };

    #[test]
    fn lasso_at_zero_radius() {
        let inst = instance();
        let sub = analytic(&inst);
        let sol = spg_lasso(&sub, 0.0, &[5.0], &SpgConfig::default(), TIGHT).unwrap();
        assert_eq!(sol.x, vec![0.0]);
        assert_eq!(sol.residual_norm(), 2.0);
    }

    #[test]
    fn lasso_single_breakpoint() {
        let inst = instance();
        let sub = analytic(&inst);
        let sol = spg_lasso(&sub, 1.0, &[0.0], &SpgConfig::default(), TIGHT).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.residual_norm() - 1.0).abs() < 1e-12);
        assert!((sol.multiplier - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lasso_interior_optimum() {
        let inst = instance();
        let sub = analytic(&inst);
        let sol = spg_lasso(&sub, 5.0, &[0.0], &SpgConfig::default(), TIGHT).unwrap();
        assert!(sol.residual_norm() <= 1e-12 * 2.0);
    }

    #[test]
    fn newton_analytic_root() {
        let inst = instance();
        let sub = analytic(&inst);
        let mut state = SpgState::new(1);
        let (cert, _) = pareto_newton(&sub, &mut state, &SpgConfig::default(), EngineMode::Certified).unwrap();
        assert!((state.tau - 1.0).abs() < 1e-12);
        assert!(state.history.len() <= 3);
        assert!((cert.x_tilde[0] - 1.0).abs() < 1e-12);
        assert!((norm2(&cert.u_tilde) - 1.0).abs() < 1e-14);
        assert!((state.history[0].slope + 1.0).abs() < 1e-15);
    }

    #[test]
    fn newton_rejects_feasible_origin() {
        let inst = instance();
        let mut sub = analytic(&inst);
        sub.sigma_k = 4.0;
        let mut state = SpgState::new(1);
        assert!(matches!(
            pareto_newton(&sub, &mut state, &SpgConfig::default(), EngineMode::Certified),
            Err(Error::Precondition(_))
        ));
    }
}
