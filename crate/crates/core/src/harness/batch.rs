//! Repeated trials over random instances and their aggregate table.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dir::{run_dir, DirConfig, EngineKind, RunStatus};
use crate::error::Result;
use crate::harness::instance::{generate_instance, InstanceSpec};
use crate::harness::metrics::compute_metrics;
use crate::problem::ProblemInstance;

/// What a benchmarked solver reports back.
#[derive(Debug, Clone)]
pub struct SolveSummary {
    pub x: Vec<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub status: String,
}

/// A named method that can be benchmarked; comparators register here.
pub trait Solver: Send + Sync {
    fn name(&self) -> String;
    fn solve(&self, instance: &ProblemInstance) -> Result<SolveSummary>;
}

/// The reweighted method with a given configuration.
#[derive(Debug, Clone)]
pub struct DirSolver {
    pub config: DirConfig,
}

impl DirSolver {
    pub fn new(engine: EngineKind) -> Self {
        Self { config: DirConfig::with_engine(engine) }
    }
}

impl Solver for DirSolver {
    fn name(&self) -> String {
        self.config.engine.to_string()
    }

    fn solve(&self, instance: &ProblemInstance) -> Result<SolveSummary> {
        let res = run_dir(instance, &self.config, None)?;
        let status = match res.status {
            RunStatus::Converged => "converged",
            RunStatus::MaxIterations => "max_iterations",
            RunStatus::SubproblemFailure => "subproblem_failure",
        };
        Ok(SolveSummary {
            outer_iterations: res.outer_iterations(),
            inner_iterations: res.total_inner_iterations,
            x: res.x_final,
            status: status.into(),
        })
    }
}

/// Writes non-finite floats as `null` and reads `null` back as NaN.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// One (instance, solver) pair. Numeric fields are NaN when the trial failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Size multiplier `i` the instance belongs to.
    pub i: usize,
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub seed: u64,
    pub engine: String,
    pub success: bool,
    #[serde(with = "nan_as_null")]
    pub recovery_error: f64,
    #[serde(with = "nan_as_null")]
    pub residual: f64,
    pub outer_iterations: usize,
    pub total_inner_iterations: usize,
    #[serde(with = "nan_as_null")]
    pub wall_seconds: f64,
    #[serde(with = "nan_as_null")]
    pub l_value: f64,
    #[serde(with = "nan_as_null")]
    pub time_l: f64,
    #[serde(with = "nan_as_null")]
    pub time_qr: f64,
    #[serde(with = "nan_as_null")]
    pub time_slater: f64,
    pub status: String,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// A row of the aggregate table; `None` where no trial qualifies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub i: usize,
    pub engine: String,
    pub success_pct: f64,
    pub iter_s: Option<f64>,
    pub iter_f: Option<f64>,
    pub cpu_s: Option<f64>,
    pub cpu_f: Option<f64>,
    pub recerr_s: Option<f64>,
    pub recerr_f: Option<f64>,
    pub res_min: Option<f64>,
    pub res_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchEntry {
    pub i: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, Default)]
struct Acc {
    n: usize,
    sum: f64,
}

impl Acc {
    fn push(&mut self, v: f64) {
        if v.is_finite() {
            self.n += 1;
            self.sum += v;
        }
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Groups records by `(i, engine)` in order of first appearance.
pub fn aggregate(records: &[TrialRecord]) -> Vec<AggregateRow> {
    let mut keys: Vec<(usize, String)> = Vec::new();
    for r in records {
        if !keys.iter().any(|(i, e)| *i == r.i && *e == r.engine) {
            keys.push((r.i, r.engine.clone()));
        }
    }
    keys.into_iter()
        .map(|(i, engine)| {
            let group: Vec<&TrialRecord> = records.iter().filter(|r| r.i == i && r.engine == engine).collect();
            let (mut it_s, mut it_f, mut cpu_s, mut cpu_f, mut err_s, mut err_f) =
                (Acc::default(), Acc::default(), Acc::default(), Acc::default(), Acc::default(), Acc::default());
            let mut res_min: Option<f64> = None;
            let mut res_max: Option<f64> = None;
            let mut successes = 0;
            for r in &group {
                let (it, cpu, err) = if r.success {
                    successes += 1;
                    (&mut it_s, &mut cpu_s, &mut err_s)
                } else {
                    (&mut it_f, &mut cpu_f, &mut err_f)
                };
                if !r.failed() {
                    it.push(r.total_inner_iterations as f64);
                }
                cpu.push(r.wall_seconds);
                err.push(r.recovery_error);
                if r.residual.is_finite() {
                    res_min = Some(res_min.map_or(r.residual, |v| v.min(r.residual)));
                    res_max = Some(res_max.map_or(r.residual, |v| v.max(r.residual)));
                }
            }
            AggregateRow {
                i,
                engine,
                success_pct: 100.0 * successes as f64 / group.len() as f64,
                iter_s: it_s.mean(),
                iter_f: it_f.mean(),
                cpu_s: cpu_s.mean(),
                cpu_f: cpu_f.mean(),
                recerr_s: err_s.mean(),
                recerr_f: err_f.mean(),
                res_min,
                res_max,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub records: Vec<TrialRecord>,
    pub table: Vec<AggregateRow>,
}

/// Runs every solver on `trials` instances per entry; trial `t` of an entry
/// uses seed `base.seed + t` at size `(base.m i, base.n i, base.s i)`.
///
/// Trial failures are recorded, never propagated.
pub fn run_batch(base: &InstanceSpec, entries: &[BatchEntry], solvers: &[&dyn Solver], parallel: bool) -> BatchOutput {
    let tasks: Vec<(usize, InstanceSpec)> = entries
        .iter()
        .flat_map(|e| {
            (0..e.trials).map(move |t| {
                let spec = InstanceSpec {
                    m: base.m * e.i,
                    n: base.n * e.i,
                    s: base.s * e.i,
                    seed: base.seed.wrapping_add(t as u64),
                    ..base.clone()
                };
                (e.i, spec)
            })
        })
        .collect();
    let run = |(i, spec): &(usize, InstanceSpec)| run_trial(*i, spec, solvers);
    let nested: Vec<Vec<TrialRecord>> = if parallel { tasks.par_iter().map(run).collect() } else { tasks.iter().map(run).collect() };
    let records: Vec<TrialRecord> = nested.into_iter().flatten().collect();
    let table = aggregate(&records);
    BatchOutput { records, table }
}

/// One instance, every solver.
pub fn run_trial(i: usize, spec: &InstanceSpec, solvers: &[&dyn Solver]) -> Vec<TrialRecord> {
    let blank = |engine: String, error: String| TrialRecord {
        i,
        m: spec.m,
        n: spec.n,
        s: spec.s,
        seed: spec.seed,
        engine,
        success: false,
        recovery_error: f64::NAN,
        residual: f64::NAN,
        outer_iterations: 0,
        total_inner_iterations: 0,
        wall_seconds: f64::NAN,
        l_value: f64::NAN,
        time_l: f64::NAN,
        time_qr: f64::NAN,
        time_slater: f64::NAN,
        status: "error".into(),
        error: Some(error),
    };
    let (instance, x_orig) = match generate_instance(spec) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("instance seed {} rejected: {e}", spec.seed);
            return solvers.iter().map(|s| blank(s.name(), e.to_string())).collect();
        }
    };
    let timings = instance.timings();
    solvers
        .iter()
        .map(|solver| {
            let start = Instant::now();
            let outcome = solver.solve(&instance).and_then(|sum| {
                let metrics = compute_metrics(&instance, &sum.x, &x_orig)?;
                Ok((sum, metrics))
            });
            let wall = start.elapsed().as_secs_f64();
            let mut rec = blank(solver.name(), String::new());
            rec.l_value = instance.lipschitz();
            rec.time_l = timings.lambda_max;
            rec.time_qr = timings.qr;
            rec.time_slater = timings.slater;
            match outcome {
                Ok((sum, metrics)) => {
                    rec.success = metrics.success;
                    rec.recovery_error = metrics.recovery_error;
                    rec.residual = metrics.residual;
                    rec.outer_iterations = sum.outer_iterations;
                    rec.total_inner_iterations = sum.inner_iterations;
                    rec.wall_seconds = wall;
                    rec.status = sum.status;
                    rec.error = None;
                }
                Err(e) => {
                    log::warn!("{} failed on seed {}: {e}", solver.name(), spec.seed);
                    rec.error = Some(e.to_string());
                }
            }
            rec
        })
        .collect()
}

pub fn write_table_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_json<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, records)?;
    Ok(())
}

pub fn read_records_json<R: std::io::Read>(input: R) -> Result<Vec<TrialRecord>> {
    Ok(serde_json::from_reader(input)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(engine: &str, success: bool, err: f64, res: f64, iters: usize) -> TrialRecord {
        TrialRecord {
            i: 1,
            m: 6,
            n: 20,
            s: 2,
            seed: 0,
            engine: engine.into(),
            success,
            recovery_error: err,
            residual: res,
            outer_iterations: 3,
            total_inner_iterations: iters,
            wall_seconds: 0.5,
            l_value: 40.0,
            time_l: 0.0,
            time_qr: 0.0,
            time_slater: 0.0,
            status: "converged".into(),
            error: None,
        }
    }

    #[test]
    fn aggregate_splits_by_outcome() {
        let recs = vec![
            record("admm", true, 0.002, -1e-4, 100),
            record("admm", true, 0.004, 2e-4, 300),
            record("admm", false, 0.5, -3e-3, 50),
            record("spg", true, 0.001, 0.0, 10),
        ];
        let table = aggregate(&recs);
        assert_eq!(table.len(), 2);
        let a = &table[0];
        assert!((a.success_pct - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iter_s, Some(200.0));
        assert_eq!(a.iter_f, Some(50.0));
        assert!((a.recerr_s.unwrap() - 0.003).abs() < 1e-15);
        assert_eq!(a.res_min, Some(-3e-3));
        assert_eq!(a.res_max, Some(2e-4));
        assert_eq!(table[1].iter_f, None);
    }

    #[test]
    fn csv_schema() {
        let table = aggregate(&[record("admm", true, 0.002, -1e-4, 100)]);
        let mut buf = Vec::new();
        write_table_csv(&table, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "i,engine,success_pct,iter_s,iter_f,cpu_s,cpu_f,recerr_s,recerr_f,res_min,res_max"
        );
        assert!(lines.next().unwrap().starts_with("1,admm,100.0,100.0,,0.5,,"));
    }

    #[test]
    fn records_round_trip_with_nan() {
        let mut r = record("admm", false, f64::NAN, f64::NAN, 0);
        r.error = Some("boom".into());
        let mut buf = Vec::new();
        write_records_json(&[r], &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("null"));
        let back = read_records_json(buf.as_slice()).unwrap();
        assert!(back[0].recovery_error.is_nan());
        assert_eq!(aggregate(&back)[0].recerr_f, None);
    }

    #[test]
    fn single_trial_batch() {
        let base = InstanceSpec::new(6, 24, 2, 3);
        let solver = DirSolver::new(EngineKind::Admm);
        let out = run_batch(&base, &[BatchEntry { i: 1, trials: 1 }], &[&solver], false);
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        let row = &out.table[0];
        assert_eq!(row.res_min, Some(r.residual));
        assert_eq!(row.res_max, Some(r.residual));
        assert_eq!(row.success_pct, if r.success { 100.0 } else { 0.0 });
    }
}
