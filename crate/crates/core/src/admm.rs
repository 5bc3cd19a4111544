//! Proximal ADMM for the weighted BPDN subproblem
//!
//! ```text
//! min ||w o x||_1 + I(||u|| <= sigma_bar)   s.t.   A_k x - b^k - u = 0
//! ```
//!
//! The proximal term `(lambda_prox / 2)||x - x^l||^2 - (beta / 2)||A_k (x - x^l)||^2`
//! linearizes the quadratic so the x-update is a single soft-threshold.

use serde::{Deserialize, Serialize};

use crate::dir::{EngineMode, EngineOutput, SubproblemEngine};
use crate::error::{Error, Result};
use crate::linalg::{norm2, soft_threshold_scalar};
use crate::subproblem::{InexactCertificate, SubproblemData};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmmConfig {
    /// Dual step factor, in `(0, (1 + sqrt 5) / 2)`.
    pub gamma: f64,
    pub max_inner: usize,
    /// Iterations to wait before re-evaluating the exact KKT distance after
    /// it failed once.
    pub kkt_check_stride: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self { gamma: 0.99 * (1.0 + 5f64.sqrt()) / 2.0, max_inner: 100_000, kkt_check_stride: 10 }
    }
}

/// Step sizes for one subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmParams {
    pub l_bar: f64,
    pub beta: f64,
    /// `lambda_prox = L_bar * beta`.
    pub prox: f64,
    pub gamma: f64,
}

impl AdmmParams {
    pub fn for_subproblem(sub: &SubproblemData<'_>, cfg: &AdmmConfig) -> Result<Self> {
        let l_bar = sub.l_bar;
        if !(l_bar > 0.0 && l_bar.is_finite()) {
            return Err(Error::Precondition(format!("L_bar = {l_bar:e} must be positive and finite")));
        }
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        if !(cfg.gamma > 0.0 && cfg.gamma < golden) {
            return Err(Error::Precondition(format!("gamma = {} outside (0, {golden})", cfg.gamma)));
        }
        let beta = l_bar.powf(-0.5);
        Ok(Self { l_bar, beta, prox: l_bar * beta, gamma: cfg.gamma })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Steps taken since the state was created.
    pub iterations: usize,
}

impl AdmmState {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self { x: vec![0.0; n], u: vec![0.0; m], lambda: vec![0.0; m], iterations: 0 }
    }
}

/// Quantities produced by one step that the stopping test needs.
#[derive(Debug, Clone, Copy)]
struct StepInfo {
    /// `||-lambda_prox dx + beta A_k^T (A_k dx - du)||`.
    cond_a: f64,
    /// `beta ||L_bar x - A_k^T (A_k x - u)|| + 1`.
    gamma_bar: f64,
    dlambda: f64,
    /// Norm of the point projected in the u-update.
    p_norm: f64,
    /// `||A_k x - b^k||`.
    res_norm: f64,
}

/// Iterate plus the products that let each step cost one forward and one
/// fused transposed product.
struct Workspace<'s, 'a> {
    sub: &'s SubproblemData<'a>,
    params: AdmmParams,
    state: AdmmState,
    /// `A_k x`.
    ax: Vec<f64>,
    /// `A_k^T (A_k x - u)`.
    h: Vec<f64>,
    /// `A_k^T (b^k + lambda / beta)`.
    c: Vec<f64>,
    thresholds: Vec<f64>,
    x_new: Vec<f64>,
    y1: Vec<f64>,
    y2: Vec<f64>,
    h_new: Vec<f64>,
    c_new: Vec<f64>,
}

impl<'s, 'a> Workspace<'s, 'a> {
    fn new(sub: &'s SubproblemData<'a>, params: AdmmParams, state: AdmmState) -> Self {
        let (m, n) = (sub.rows(), sub.cols());
        let mut ws = Self {
            sub,
            params,
            thresholds: sub.weights.iter().map(|w| w / (params.beta * params.l_bar)).collect(),
            ax: vec![0.0; m],
            h: vec![0.0; n],
            c: vec![0.0; n],
            x_new: vec![0.0; n],
            y1: vec![0.0; m],
            y2: vec![0.0; m],
            h_new: vec![0.0; n],
            c_new: vec![0.0; n],
            state,
        };
        sub.apply(&ws.state.x, &mut ws.ax);
        for i in 0..m {
            ws.y1[i] = ws.ax[i] - ws.state.u[i];
            ws.y2[i] = sub.b_w[i] + ws.state.lambda[i] / params.beta;
        }
        sub.apply_t2(&ws.y1, &ws.y2, &mut ws.h, &mut ws.c);
        ws
    }

    fn step(&mut self) -> StepInfo {
        let AdmmParams { l_bar, beta, prox, gamma, .. } = self.params;
        let sub = self.sub;
        let st = &mut self.state;
        for j in 0..st.x.len() {
            let grad = self.h[j] - self.c[j];
            self.x_new[j] = soft_threshold_scalar(st.x[j] - grad / l_bar, self.thresholds[j]);
        }
        sub.apply(&self.x_new, &mut self.ax);

        let bar_sigma = sub.bar_sigma();
        let m = st.u.len();
        // y1 holds the pre-projection point p for now.
        let mut p_sq = 0.0;
        for i in 0..m {
            let p = self.ax[i] - sub.b_w[i] - st.lambda[i] / beta;
            self.y1[i] = p;
            p_sq += p * p;
        }
        let p_norm = p_sq.sqrt();
        let scale = if p_norm > bar_sigma { bar_sigma / p_norm } else { 1.0 };
        let mut dl_sq = 0.0;
        let mut res_sq = 0.0;
        for i in 0..m {
            let u_new = scale * self.y1[i];
            st.u[i] = u_new;
            let r = self.ax[i] - sub.b_w[i];
            res_sq += r * r;
            let dl = gamma * beta * (r - u_new);
            dl_sq += dl * dl;
            st.lambda[i] -= dl;
            self.y1[i] = self.ax[i] - u_new;
            self.y2[i] = sub.b_w[i] + st.lambda[i] / beta;
        }
        sub.apply_t2(&self.y1, &self.y2, &mut self.h_new, &mut self.c_new);

        let mut a_sq = 0.0;
        let mut g_sq = 0.0;
        for j in 0..st.x.len() {
            let dx = self.x_new[j] - st.x[j];
            let t = -prox * dx + beta * (self.h_new[j] - self.h[j]);
            a_sq += t * t;
            let q = l_bar * self.x_new[j] - self.h_new[j];
            g_sq += q * q;
        }
        std::mem::swap(&mut st.x, &mut self.x_new);
        std::mem::swap(&mut self.h, &mut self.h_new);
        std::mem::swap(&mut self.c, &mut self.c_new);
        st.iterations += 1;
        StepInfo {
            cond_a: a_sq.sqrt(),
            gamma_bar: beta * g_sq.sqrt() + 1.0,
            dlambda: dl_sq.sqrt(),
            p_norm,
            res_norm: res_sq.sqrt(),
        }
    }

    /// The multiplier of the u-update's ball constraint.
    fn multiplier(&self, p_norm: f64) -> f64 {
        let bar_sigma = self.sub.bar_sigma();
        if p_norm > bar_sigma {
            self.params.beta * p_norm / bar_sigma - self.params.beta
        } else {
            0.0
        }
    }
}

/// One ADMM step from `state`.
pub fn admm_step(state: AdmmState, sub: &SubproblemData<'_>, cfg: &AdmmConfig) -> Result<AdmmState> {
    check_dims(&state, sub)?;
    let params = AdmmParams::for_subproblem(sub, cfg)?;
    let mut ws = Workspace::new(sub, params, state);
    ws.step();
    Ok(ws.state)
}

fn check_dims(state: &AdmmState, sub: &SubproblemData<'_>) -> Result<()> {
    if state.x.len() != sub.cols() || state.u.len() != sub.rows() || state.lambda.len() != sub.rows() {
        return Err(Error::Dimension("ADMM state does not match the subproblem".into()));
    }
    Ok(())
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AdmmSolveStats {
    pub iterations: usize,
    /// Smallest condition-(a) left side seen and the step it occurred at.
    pub best_cond_a: f64,
    pub best_cond_a_at: usize,
    pub final_cond_a: f64,
    pub kkt_evaluations: usize,
}

/// Runs ADMM on `sub` until the practical stopping conditions and the
/// plain inexactness conditions at `eps_k` hold.
///
/// On `max_inner` the error is returned together with the state reached, so
/// a caller can resume.
pub fn admm_solve(
    sub: &SubproblemData<'_>,
    warm: Option<AdmmState>,
    cfg: &AdmmConfig,
) -> std::result::Result<(InexactCertificate, AdmmState, AdmmSolveStats), (Error, Option<AdmmState>)> {
    let state = warm.unwrap_or_else(|| AdmmState::zeros(sub.rows(), sub.cols()));
    if let Err(e) = check_dims(&state, sub) {
        return Err((e, None));
    }
    let params = match AdmmParams::for_subproblem(sub, cfg) {
        Ok(p) => p,
        Err(e) => return Err((e, Some(state))),
    };
    let mut ws = Workspace::new(sub, params, state);
    let eps_bar = sub.sigma_k.min(sub.sigma_k.sqrt());
    let eps = sub.eps_k;
    let mut stats = AdmmSolveStats { best_cond_a: f64::INFINITY, ..Default::default() };
    let mut next_kkt = 0;
    for l in 0..cfg.max_inner {
        let info = ws.step();
        stats.iterations = l + 1;
        stats.final_cond_a = info.cond_a;
        if info.cond_a < stats.best_cond_a {
            stats.best_cond_a = info.cond_a;
            stats.best_cond_a_at = l + 1;
        }
        let a_ok = info.cond_a <= eps_bar.min(sub.tau_k * info.gamma_bar);
        let lam_norm = norm2(&ws.state.lambda);
        let b_ok = info.dlambda <= params.gamma * params.beta * eps_bar.min(sub.tau_k * (lam_norm + 1.0));
        let coupling = info.dlambda / (params.gamma * params.beta);
        if !(a_ok && b_ok && coupling <= eps && l >= next_kkt) {
            continue;
        }
        if !sub.descent_ok(&ws.state.x, info.res_norm) {
            continue;
        }
        stats.kkt_evaluations += 1;
        let cert = sub.certify(ws.state.x.clone(), ws.state.u.clone(), ws.multiplier(info.p_norm));
        if cert.satisfies(eps, sub.sigma_k) {
            return Ok((cert, ws.state, stats));
        }
        next_kkt = l + cfg.kkt_check_stride;
    }
    let state = ws.state;
    Err((
        Error::Engine(format!(
            "ADMM reached {} iterations at k = {} (condition (a) {:e}, eps_k {:e})",
            cfg.max_inner, sub.k, stats.final_cond_a, eps
        )),
        Some(state),
    ))
}

/// ADMM as a subproblem engine, warm-started across outer iterations.
#[derive(Debug, Clone)]
pub struct AdmmEngine {
    cfg: AdmmConfig,
    state: Option<AdmmState>,
    last_stats: Option<AdmmSolveStats>,
    all_stats: Vec<AdmmSolveStats>,
}

impl AdmmEngine {
    pub fn new(cfg: AdmmConfig) -> Self {
        Self { cfg, state: None, last_stats: None, all_stats: Vec::new() }
    }

    pub fn state(&self) -> Option<&AdmmState> {
        self.state.as_ref()
    }

    pub fn last_stats(&self) -> Option<&AdmmSolveStats> {
        self.last_stats.as_ref()
    }

    /// Stats of every successful solve, in order.
    pub fn solve_stats(&self) -> &[AdmmSolveStats] {
        &self.all_stats
    }
}

impl SubproblemEngine for AdmmEngine {
    fn name(&self) -> &str {
        "admm"
    }

    fn mode(&self) -> EngineMode {
        EngineMode::Certified
    }

    fn solve(&mut self, sub: &SubproblemData<'_>) -> Result<EngineOutput> {
        let warm = self.state.take().filter(|s| s.x.len() == sub.cols() && s.u.len() == sub.rows());
        let before = warm.as_ref().map_or(0, |s| s.iterations);
        match admm_solve(sub, warm, &self.cfg) {
            Ok((certificate, state, stats)) => {
                let inner_iterations = state.iterations - before;
                self.state = Some(state);
                self.last_stats = Some(stats);
                self.all_stats.push(stats);
                Ok(EngineOutput { certificate, inner_iterations })
            }
            Err((e, state)) => {
                self.state = state;
                Err(e)
            }
        }
    }
}
