//! Experiment tooling: instance generation, metrics, batches and file I/O.

pub mod batch;
pub mod instance;
pub mod io;
pub mod metrics;

pub use batch::{aggregate, run_batch, run_trial, AggregateRow, BatchEntry, BatchOutput, DirSolver, SolveSummary, Solver, TrialRecord};
pub use instance::{generate_instance, generate_raw, InstanceSpec, RawInstance};
pub use metrics::{compute_metrics, Metrics, SUCCESS_THRESHOLD};
