//! Doubly iteratively reweighted solver for nonconvex constrained sparse
//! recovery:
//!
//! ```text
//! min  sum_i log(1 + |x_i| / eps)   s.t.   sum_i phi((b_i - a_i^T x)^2) <= sigma
//! ```
//!
//! with a concave robust loss `phi`. Each outer iteration solves a weighted
//! basis-pursuit-denoise problem with ADMM or a spectral projected gradient
//! Pareto root finder, then retracts the answer into the feasible set.

pub mod admm;
pub mod dir;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod problem;
pub mod spg;
pub mod subproblem;

pub use dir::{run_dir, run_dir_with, stationarity_report, DirConfig, EngineKind, EngineMode, RunResult, RunStatus};
pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use losses::{LossKind, LossSpec, PenaltySpec};
pub use problem::ProblemInstance;
pub use subproblem::{build_subproblem, InexactCertificate, SubproblemData};
