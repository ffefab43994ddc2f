//! `fim` — command-line toolkit for zero-shot imputation of ODE-governed
//! time series: synthetic dataset generation, training, imputation,
//! simulation, benchmarking and phase-portrait extraction.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fim", version, about = "Zero-shot imputation of ODE-governed time series")]
struct Cli {
    /// Declarative config file (TOML); flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (also env FIM_THREADS); 1 is the deterministic
    /// reference mode, and results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic training/test dataset.
    Generate(GenerateArgs),
    /// Train a model stage on a dataset.
    Train(TrainArgs),
    /// Impute a series file with trained weights.
    Impute(ImputeArgs),
    /// Simulate a built-in dynamical system and export the trajectory.
    Simulate(SimulateArgs),
    /// Corrupt-and-score benchmark over systems and imputers.
    Benchmark(BenchmarkArgs),
    /// Extract phase-portrait columns (x, dx[, ddx]).
    PhasePortrait(PhaseArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Dataset kind: pointwise | temporal [default: pointwise]
    #[arg(long)]
    kind: Option<String>,
    /// Number of records [default: 4096].
    #[arg(long)]
    n: Option<u64>,
    /// Base seed (required: there is no wall-clock default).
    #[arg(long)]
    seed: u64,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
    /// Optional packed binary copy.
    #[arg(long)]
    binary: Option<PathBuf>,
    /// Fine-grid length override [default: 128 pointwise, 256 temporal].
    #[arg(long)]
    fine_grid: Option<usize>,
    /// Noise level override (folded-Gaussian std) [default: 0.1 pointwise, 0.05 temporal].
    #[arg(long)]
    noise_lambda: Option<f64>,
    /// Family mix "chebyshev,gp_rbf,gp_periodic", e.g. "0.5,0.5,0".
    #[arg(long)]
    family_mix: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Stage: local | gap | finetune [default: local]
    #[arg(long)]
    stage: Option<String>,
    /// Dataset (JSONL or FIMD) for local/gap stages.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Series file (CSV/JSONL) for the finetune stage.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Frozen/base weights: the local model for gap and finetune stages.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Resume from an exact checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Training epochs [default: 2000].
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size [default: 64].
    #[arg(long)]
    batch: Option<usize>,
    /// Constant learning rate [default: 1e-3 local, 1e-6 finetune].
    #[arg(long)]
    lr: Option<f64>,
    /// Cosine annealing "hi,lo" [default for gap stage: 1e-3,1e-5].
    #[arg(long)]
    lr_cosine: Option<String>,
    /// Decoupled weight decay [default: 1e-4; 1e-3 for gap].
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Validation fraction [default: 0.1].
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Network size preset: desk | paper [default: desk]
    #[arg(long)]
    net: Option<String>,
    /// Window count for the finetune stage [default: 4].
    #[arg(long)]
    windows: Option<usize>,
    /// Seed (required; reruns are bit-identical).
    #[arg(long)]
    seed: u64,
    /// Final weights output (FIMW).
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write an exact checkpoint every K epochs into --checkpoint-dir.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ImputeArgs {
    /// Input series file (CSV or JSONL).
    #[arg(long)]
    input: PathBuf,
    /// Local-model weights (FIMW).
    #[arg(long)]
    weights: PathBuf,
    /// Mode: pointwise | gap [default: pointwise]
    #[arg(long)]
    mode: Option<String>,
    /// Gap-model weights (FIMW, stage "gap"); required in gap mode.
    #[arg(long)]
    gap_weights: Option<PathBuf>,
    /// Gap interval "lo,hi"; required in gap mode.
    #[arg(long)]
    gap: Option<String>,
    /// Windowing by count [default: 1].
    #[arg(long)]
    windows: Option<usize>,
    /// Windowing by observations per window.
    #[arg(long)]
    window_obs: Option<usize>,
    /// Output grid length [default: 512].
    #[arg(long)]
    grid: Option<usize>,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV flattening of the same values.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// System: van_der_pol | rossler | lorenz [default: van_der_pol]
    #[arg(long)]
    system: Option<String>,
    /// Van der Pol nonlinearity [default: 0.5].
    #[arg(long)]
    mu: Option<f64>,
    /// Initial state "a,b[,c]".
    #[arg(long)]
    x0: Option<String>,
    /// Time span [default: 10].
    #[arg(long)]
    t: Option<f64>,
    /// Output points [default: 512].
    #[arg(long)]
    points: Option<usize>,
    /// Subsample drop fraction; with --gamma requires --seed.
    #[arg(long)]
    rho: Option<f64>,
    /// Multiplicative noise level.
    #[arg(long)]
    gamma: Option<f64>,
    /// Corruption seed (required when corrupting).
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Built-in systems, comma separated [default: van_der_pol,rossler,lorenz]
    #[arg(long)]
    systems: Option<String>,
    /// User trajectory CSVs used in place of built-ins.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Imputers: spline | savgol:W:O | mean | fim:PATH[:wn=M|:on=N] [default: spline,savgol:15:3,mean]
    #[arg(long)]
    imputers: Option<String>,
    /// Corruption drop fractions, comma separated [default: 0,0.5].
    #[arg(long)]
    rho_grid: Option<String>,
    /// Corruption noise levels, comma separated [default: 0,0.05].
    #[arg(long)]
    gamma_grid: Option<String>,
    /// Corruption resamplings per cell [default: 10].
    #[arg(long)]
    seeds: Option<u64>,
    /// Base seed (required; reruns are bit-identical).
    #[arg(long)]
    seed: u64,
    /// Fine-grid points for simulated systems [default: 512].
    #[arg(long)]
    points: Option<usize>,
    /// Metric mask: all | missing [default: all]
    #[arg(long)]
    mask_mode: Option<String>,
    /// Report CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON report.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Optional directory for quick-inspection SVG plots.
    #[arg(long)]
    svg_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PhaseArgs {
    /// Input series file; alternatively --system.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Simulate this built-in system and observe its first coordinate.
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Corruption seed (required with --system corruption).
    #[arg(long)]
    seed: Option<u64>,
    /// Local-model weights.
    #[arg(long)]
    weights: PathBuf,
    /// Derivative depth: 1 -> (x, dx), 2 -> (x, dx, ddx) [default: 1].
    #[arg(long)]
    depth: Option<u8>,
    /// Window count for the first application [default: 4].
    #[arg(long)]
    windows: Option<usize>,
    /// Plotting-grid length [default: 2048].
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    depth2_grid: Option<usize>,
    #[arg(long)]
    depth2_windows: Option<usize>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

/// Error classes mapped to exit codes: validation -> 2, runtime -> 3.
pub enum AppError {
    Validation(String),
    Runtime(String),
}

impl From<fim_core::Error> for AppError {
    fn from(e: fim_core::Error) -> Self {
        match &e {
            fim_core::Error::Config(_) | fim_core::Error::Parse { .. } => {
                AppError::Validation(e.to_string())
            }
            _ => AppError::Runtime(e.to_string()),
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;

fn resolve_threads(flag: Option<usize>, file: Option<usize>) -> usize {
    let env = std::env::var("FIM_THREADS").ok().and_then(|v| v.parse().ok());
    flag.or(env).or(file).unwrap_or(1).max(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let file = match config::load(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let threads = resolve_threads(cli.threads, file.threads);
    let result = match cli.command {
        Command::Generate(args) => commands::generate(args, &file),
        Command::Train(args) => commands::train(args, &file, threads),
        Command::Impute(args) => commands::impute(args, &file),
        Command::Simulate(args) => commands::simulate(args, &file),
        Command::Benchmark(args) => commands::benchmark(args, &file),
        Command::PhasePortrait(args) => commands::phase(args, &file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
