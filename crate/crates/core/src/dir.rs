//! The doubly reweighted outer loop.
//!
//! Each iteration linearizes the penalty and the loss at the current feasible
//! point, hands the resulting weighted BPDN problem to a subproblem engine,
//! and retracts the answer back into the feasible set.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::admm::{AdmmConfig, AdmmEngine};
use crate::error::{Error, Result};
use crate::linalg::{dist2, norm2};
use crate::problem::ProblemInstance;
use crate::spg::{SpgConfig, SpgEngine};
use crate::subproblem::{build_subproblem, displacement_bound, InexactCertificate, SubproblemData, FEASIBILITY_SLACK};

/// Whether the outer loop should insist on the three inexactness conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    Certified,
    Blackbox,
}

#[derive(Debug, Clone)]
pub struct EngineOutput {
    pub certificate: InexactCertificate,
    pub inner_iterations: usize,
}

/// A solver for the reweighted subproblem. Implementations keep their own
/// warm-start state between calls.
pub trait SubproblemEngine {
    fn name(&self) -> &str;
    fn mode(&self) -> EngineMode;
    fn solve(&mut self, sub: &SubproblemData<'_>) -> Result<EngineOutput>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EngineKind {
    Admm,
    SpgCertified,
    SpgBlackbox,
}

impl EngineKind {
    pub fn mode(self) -> EngineMode {
        match self {
            EngineKind::SpgBlackbox => EngineMode::Blackbox,
            _ => EngineMode::Certified,
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::Admm => "admm",
            EngineKind::SpgCertified => "spg",
            EngineKind::SpgBlackbox => "spg-blackbox",
        })
    }
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "admm" => Ok(EngineKind::Admm),
            "spg" | "spg-certified" | "spgl1" => Ok(EngineKind::SpgCertified),
            "spg-blackbox" | "vspgl1" | "blackbox" => Ok(EngineKind::SpgBlackbox),
            other => Err(Error::Invalid(format!("unknown engine `{other}` (expected admm, spg, spg-blackbox)"))),
        }
    }
}

/// `max{base^(-k-1), floor}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricSchedule {
    pub base: f64,
    pub floor: f64,
}

impl GeometricSchedule {
    pub fn at(&self, k: usize) -> f64 {
        let exponent = -(k as f64) - 1.0;
        self.base.powf(exponent).max(self.floor)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirConfig {
    pub tau_schedule: GeometricSchedule,
    pub mu_schedule: GeometricSchedule,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub engine: EngineKind,
    /// `eps_k` as a fraction of its largest admissible value.
    pub eps_fraction: f64,
    /// Extra engine calls allowed after a failed subproblem solve.
    pub max_retries: usize,
    pub admm: AdmmConfig,
    pub spg: SpgConfig,
}

impl Default for DirConfig {
    fn default() -> Self {
        Self {
            tau_schedule: GeometricSchedule { base: 5.0, floor: 1e-8 },
            mu_schedule: GeometricSchedule { base: 1.2, floor: 1e-8 },
            outer_tol: 1e-4,
            max_outer: 1000,
            engine: EngineKind::Admm,
            eps_fraction: 1.0,
            max_retries: 1,
            admm: AdmmConfig::default(),
            spg: SpgConfig::default(),
        }
    }
}

impl DirConfig {
    pub fn with_engine(engine: EngineKind) -> Self {
        Self { engine, ..Self::default() }
    }

    pub fn build_engine(&self) -> Box<dyn SubproblemEngine + Send> {
        match self.engine {
            EngineKind::Admm => Box::new(AdmmEngine::new(self.admm.clone())),
            EngineKind::SpgCertified => Box::new(SpgEngine::new(self.spg.clone(), EngineMode::Certified)),
            EngineKind::SpgBlackbox => Box::new(SpgEngine::new(self.spg.clone(), EngineMode::Blackbox)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    SubproblemFailure,
}

/// One outer iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub sigma_k: f64,
    pub eps_k: f64,
    pub tau_k: f64,
    pub mu_k: f64,
    pub sigma_clamped: bool,
    /// `Psi(|x^k|)`.
    pub psi: f64,
    /// `Psi(|x^{k+1}|)`.
    pub psi_next: f64,
    /// `Phi` at `x^{k+1}`.
    pub constraint_next: f64,
    pub kkt_residual: f64,
    pub coupling_residual: f64,
    pub descent_ok: bool,
    /// Every inexactness condition held at `eps_k`.
    pub certified: bool,
    pub multiplier: f64,
    pub retracted: bool,
    /// `||x^{k+1} - x_tilde||`.
    pub retraction_shift: f64,
    /// `(eps_k / sqrt(sigma_k)) ||A^+ b - x_tilde||`.
    pub retraction_bound: f64,
    pub inner_iterations: usize,
    pub attempts: usize,
    pub relative_step: f64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub lambda: f64,
    /// `Phi(...) - sigma`.
    pub primal_feasibility: f64,
    pub complementarity: f64,
    pub dual_residual: f64,
    /// `||Psi'_+(|x|)||`, the natural scale of `dual_residual`.
    pub weight_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    /// The reporting point: the last engine output `x_tilde`.
    pub x_final: Vec<f64>,
    /// The last retracted iterate `x^k`.
    pub x_retracted: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub stationarity: StationarityReport,
    pub status: RunStatus,
    pub engine: EngineKind,
    pub last_multiplier: f64,
    pub total_inner_iterations: usize,
    pub wall_seconds: f64,
    pub failure: Option<String>,
}

impl RunResult {
    pub fn outer_iterations(&self) -> usize {
        self.history.len()
    }

    /// Writes the history as JSON lines.
    pub fn write_history_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.history {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs the outer loop with the engine named in `config`.
pub fn run_dir(instance: &ProblemInstance, config: &DirConfig, x0: Option<&[f64]>) -> Result<RunResult> {
    let mut engine = config.build_engine();
    run_dir_with(instance, config, engine.as_mut(), x0)
}

/// Runs the outer loop with a caller-supplied engine.
pub fn run_dir_with(
    instance: &ProblemInstance,
    config: &DirConfig,
    engine: &mut dyn SubproblemEngine,
    x0: Option<&[f64]>,
) -> Result<RunResult> {
    let start = Instant::now();
    let mut x = match x0 {
        Some(x0) => {
            if x0.len() != instance.cols() {
                return Err(Error::Dimension(format!("x0 has length {}, expected {}", x0.len(), instance.cols())));
            }
            let c = instance.constraint_value(x0);
            if c > instance.sigma() + FEASIBILITY_SLACK {
                return Err(Error::Precondition(format!("x0 is infeasible: {c:e} > sigma {:e}", instance.sigma())));
            }
            x0.to_vec()
        }
        None => instance.least_norm().to_vec(),
    };
    let mode = engine.mode();
    let mut history = Vec::new();
    let mut x_tilde = x.clone();
    let mut multiplier = 0.0;
    let mut total_inner = 0;
    let mut status = RunStatus::MaxIterations;
    let mut failure = None;

    for k in 0..config.max_outer {
        let sub = build_subproblem(
            instance,
            &x,
            k,
            config.tau_schedule.at(k),
            config.mu_schedule.at(k),
            config.eps_fraction,
        )?;

        let mut attempts = 0;
        let mut inner = 0;
        let mut accepted = None;
        let mut last_err = None;
        while attempts <= config.max_retries {
            attempts += 1;
            match engine.solve(&sub) {
                Ok(out) => {
                    inner += out.inner_iterations;
                    let ok = out.certificate.satisfies(sub.eps_k, sub.sigma_k);
                    if mode == EngineMode::Certified && !ok {
                        let c = &out.certificate;
                        last_err = Some(format!(
                            "certificate rejected at k = {k}: kkt {:e}, coupling {:e}, eps_k {:e}, descent {}",
                            c.kkt_residual, c.coupling_residual, sub.eps_k, c.descent_ok
                        ));
                        continue;
                    }
                    accepted = Some((out.certificate, ok));
                    break;
                }
                Err(e) => last_err = Some(e.to_string()),
            }
        }
        total_inner += inner;
        let Some((cert, certified)) = accepted else {
            let msg = last_err.unwrap_or_else(|| "engine produced no output".into());
            log::warn!("{} failed at k = {k}: {msg}", engine.name());
            failure = Some(msg);
            status = RunStatus::SubproblemFailure;
            break;
        };

        let (x_next, theta) = sub.retract_with_residual_norm(&cert.x_tilde, cert.residual_norm);
        let rel = dist2(&x_next, &x) / norm2(&x).max(1.0);
        history.push(IterationRecord {
            k,
            sigma_k: sub.sigma_k,
            eps_k: sub.eps_k,
            tau_k: sub.tau_k,
            mu_k: sub.mu_k,
            sigma_clamped: sub.sigma_clamped,
            psi: instance.objective(&x),
            psi_next: instance.objective(&x_next),
            constraint_next: instance.constraint_value(&x_next),
            kkt_residual: cert.kkt_residual,
            coupling_residual: cert.coupling_residual,
            descent_ok: cert.descent_ok,
            certified,
            multiplier: cert.multiplier,
            retracted: theta < 1.0,
            retraction_shift: dist2(&x_next, &cert.x_tilde),
            retraction_bound: displacement_bound(&sub, &cert.x_tilde),
            inner_iterations: inner,
            attempts,
            relative_step: rel,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!(
            "k = {k}: psi {:.6e}, sigma_k {:.3e}, eps_k {:.1e}, inner {inner}, step {rel:.2e}",
            instance.objective(&x_next),
            sub.sigma_k,
            sub.eps_k
        );
        multiplier = cert.multiplier;
        x_tilde = cert.x_tilde;
        x = x_next;
        if rel <= config.outer_tol {
            status = RunStatus::Converged;
            break;
        }
    }

    let stationarity = stationarity_report(instance, &x_tilde, 0.5 * multiplier)?;
    Ok(RunResult {
        x_final: x_tilde,
        x_retracted: x,
        history,
        stationarity,
        status,
        engine: config.engine,
        last_multiplier: multiplier,
        total_inner_iterations: total_inner,
        wall_seconds: start.elapsed().as_secs_f64(),
        failure,
    })
}

/// First-order stationarity measures of `x` with constraint multiplier
/// `lambda`: `0 in Psi'_+(|x|) o d||x||_1 - 2 lambda sum phi'_+(r_i^2) r_i a_i`.
pub fn stationarity_report(instance: &ProblemInstance, x: &[f64], lambda: f64) -> Result<StationarityReport> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("multiplier must be nonnegative, got {lambda}")));
    }
    if x.len() != instance.cols() {
        return Err(Error::Dimension(format!("x has length {}, expected {}", x.len(), instance.cols())));
    }
    let loss = instance.loss();
    let r = instance.residual(x);
    let scaled: Vec<f64> = r.iter().map(|ri| 2.0 * lambda * loss.derivative(ri * ri) * ri).collect();
    let mut g = vec![0.0; instance.cols()];
    instance.a().mul_t_vec(&scaled, &mut g);
    let weights = instance.penalty().weights(x);
    let dual: f64 = x
        .iter()
        .zip(&weights)
        .zip(&g)
        .map(|((&xi, &wi), &gi)| {
            let d = if xi != 0.0 { gi - wi * xi.signum() } else { (gi.abs() - wi).max(0.0) };
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let primal = instance.constraint_value(x) - instance.sigma();
    Ok(StationarityReport {
        lambda,
        primal_feasibility: primal,
        complementarity: lambda * primal,
        dual_residual: dual,
        weight_norm: norm2(&weights),
    })
}
