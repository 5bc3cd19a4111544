use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dir_sparse::dir::{IterationRecord, StationarityReport};
use dir_sparse::harness::batch::{write_records_json, write_table_csv};
use dir_sparse::harness::io::{read_matrix, read_vector, write_matrix_binary, write_vector_csv};
use dir_sparse::harness::{compute_metrics, generate_raw, run_batch, BatchEntry, DirSolver, InstanceSpec, Solver};
use dir_sparse::{run_dir, DirConfig, EngineKind, Error, LossKind, LossSpec, PenaltySpec, ProblemInstance, Result, RunStatus};

#[derive(Parser)]
#[command(name = "dir-sparse", version, about = "Reweighted solver for robust constrained sparse recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem read from files.
    Solve(SolveArgs),
    /// Run repeated random trials and write the aggregate table.
    Bench(BenchArgs),
    /// Write a random instance to files.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    rhs: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value = "cauchy")]
    loss: LossKind,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0.1)]
    penalty_eps: f64,
    #[arg(long, default_value = "admm")]
    engine: EngineKind,
    /// Relative step tolerance of the outer loop.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_outer: usize,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration history as JSON lines.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Planted signal; adds recovery error to the metrics.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 540)]
    m: usize,
    #[arg(long, default_value_t = 2560)]
    n: usize,
    #[arg(long, default_value_t = 80)]
    s: usize,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "admm,spg-blackbox")]
    engines: Vec<EngineKind>,
    /// Size multipliers i, giving (m i, n i, s i).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    scale: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Run trials on the rayon pool.
    #[arg(long)]
    parallel: bool,
    /// Threads for the rayon pool (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Aggregate table (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Per-trial log (JSON).
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_scale: f64,
    /// Directory receiving A.bin, b.csv, x_orig.csv and instance.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct SolveMetrics {
    objective: f64,
    constraint: f64,
    relative_residual: f64,
    outer_iterations: usize,
    inner_iterations: usize,
    wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    recovery_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    success: Option<bool>,
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    x: &'a [f64],
    status: RunStatus,
    history: &'a [IterationRecord],
    stationarity: StationarityReport,
    metrics: SolveMetrics,
}

fn solve(args: SolveArgs) -> Result<()> {
    let a = read_matrix(&args.matrix)?;
    let b = read_vector(&args.rhs)?;
    let loss = LossSpec::new(args.loss, args.delta)?;
    let instance = ProblemInstance::new(a, b, args.sigma, loss, PenaltySpec::log(args.penalty_eps)?)?;
    let config = DirConfig { outer_tol: args.tol, max_outer: args.max_outer, ..DirConfig::with_engine(args.engine) };
    let result = run_dir(&instance, &config, None)?;
    let truth = args.truth.as_ref().map(read_vector).transpose()?;
    let quality = truth.as_ref().map(|t| compute_metrics(&instance, &result.x_final, t)).transpose()?;
    let output = SolveOutput {
        x: &result.x_final,
        status: result.status,
        history: &result.history,
        stationarity: result.stationarity,
        metrics: SolveMetrics {
            objective: instance.objective(&result.x_final),
            constraint: instance.constraint_value(&result.x_final),
            relative_residual: instance.relative_residual(&result.x_final),
            outer_iterations: result.outer_iterations(),
            inner_iterations: result.total_inner_iterations,
            wall_seconds: result.wall_seconds,
            recovery_error: quality.map(|q| q.recovery_error),
            success: quality.map(|q| q.success),
        },
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(&args.out)?), &output)?;
    if let Some(path) = &args.history {
        result.write_history_jsonl(BufWriter::new(File::create(path)?))?;
    }
    log::info!("{:?} after {} outer iterations", result.status, result.outer_iterations());
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    }
    let base = InstanceSpec { delta: args.delta, epsilon: args.epsilon, ..InstanceSpec::new(args.m, args.n, args.s, args.seed) };
    let solvers: Vec<DirSolver> = args.engines.iter().map(|e| DirSolver::new(*e)).collect();
    let refs: Vec<&dyn Solver> = solvers.iter().map(|s| s as &dyn Solver).collect();
    let entries: Vec<BatchEntry> = args.scale.iter().map(|&i| BatchEntry { i, trials: args.trials }).collect();
    let out = run_batch(&base, &entries, &refs, args.parallel);
    write_table_csv(&out.table, BufWriter::new(File::create(&args.out)?))?;
    if let Some(path) = &args.records {
        write_records_json(&out.records, BufWriter::new(File::create(path)?))?;
    }
    for row in &out.table {
        log::info!("i = {} {}: success {:.0}%", row.i, row.engine, row.success_pct);
    }
    Ok(())
}

#[derive(Serialize)]
struct InstanceMeta {
    m: usize,
    n: usize,
    s: usize,
    seed: u64,
    delta: f64,
    sigma: f64,
}

fn generate(args: GenerateArgs) -> Result<()> {
    let spec = InstanceSpec { delta: args.delta, noise_scale: args.noise_scale, ..InstanceSpec::new(args.m, args.n, args.s, args.seed) };
    let raw = generate_raw(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_matrix_binary(args.out_dir.join("A.bin"), &raw.a)?;
    write_vector_csv(args.out_dir.join("b.csv"), &raw.b)?;
    write_vector_csv(args.out_dir.join("x_orig.csv"), &raw.x_orig)?;
    let meta = InstanceMeta { m: spec.m, n: spec.n, s: spec.s, seed: spec.seed, delta: spec.delta, sigma: raw.sigma };
    serde_json::to_writer_pretty(File::create(args.out_dir.join("instance.json"))?, &meta)?;
    println!("{:e}", raw.sigma);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::Generate(a) => generate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
