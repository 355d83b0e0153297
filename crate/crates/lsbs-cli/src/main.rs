//! `lsbs` — localized Schrödinger bridge sampling from the command line.
//!
//! Subcommands: `gen` (training data), `fit` (per-coordinate Sinkhorn
//! weights), `sample` (new samples + diagnostics), `closure` (reduced-model
//! integration with a sampled closure term), `diag` (statistics of an
//! existing dataset). Every command is a pure function of its config file,
//! flags, input files, and seed; reruns reproduce outputs bit for bit.
//!
//! Errors are emitted as one JSON object per line on stderr with a nonzero
//! exit code.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use lsbs::error::Error;

#[derive(Parser)]
#[command(name = "lsbs", version, about = "Localized Schrödinger bridge sampler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training dataset for a built-in experiment.
    Gen(Flags),
    /// Fit per-coordinate Sinkhorn weights to a dataset.
    Fit(Flags),
    /// Generate new samples from a fitted model.
    Sample(Flags),
    /// Integrate the reduced model with a conditionally sampled closure term.
    Closure(Flags),
    /// Compute diagnostics of a dataset.
    Diag(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// Key-value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment name: gauss_tridiag, gauss_laplacian, bimodal, lorenz96.
    #[arg(long)]
    experiment: Option<String>,
    /// Sampling scheme (em, split_step, data_aware, localized_em,
    /// localized_split_step, localized_data_aware, kde_split_step,
    /// localized_kde).
    #[arg(long)]
    scheme: Option<String>,
    /// Bandwidth and Langevin step size.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Stencil radius for the periodic dependency-set family.
    #[arg(long)]
    radius: Option<usize>,
    /// Dependency-set family: stencil, temporal, closure, full.
    #[arg(long)]
    sets: Option<String>,
    /// Block size for the temporal family.
    #[arg(long)]
    s: Option<usize>,
    /// Training sample count (gen).
    #[arg(short, long)]
    m: Option<usize>,
    /// Generated sample count (sample).
    #[arg(short, long)]
    n: Option<usize>,
    /// Decorrelation steps per sample / thinning interval.
    #[arg(long)]
    n_c: Option<usize>,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sinkhorn stopping tolerance.
    #[arg(long)]
    sinkhorn_tol: Option<f64>,
    /// Sinkhorn iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Chain mode: restart or long_chain.
    #[arg(long)]
    mode: Option<String>,
    /// State dimension (gauss experiments).
    #[arg(long)]
    d: Option<usize>,
    /// Periodic domain length (gauss_laplacian).
    #[arg(long)]
    length: Option<f64>,
    /// Histogram bins.
    #[arg(long)]
    bins: Option<usize>,
    /// Maximum autocovariance lag.
    #[arg(long)]
    tau_max: Option<usize>,
    /// Euler step of the closure integration.
    #[arg(long)]
    dt: Option<f64>,
    /// Euler steps of the closure integration.
    #[arg(long)]
    n_steps: Option<usize>,
    /// Sample the closure term (false integrates the truncated model).
    #[arg(long)]
    use_closure: Option<bool>,
    /// Forcing constant of the truncated drift.
    #[arg(long)]
    forcing: Option<f64>,
    /// Metric scales: auto, unit, or comma-separated divisors.
    #[arg(long)]
    metric: Option<String>,
    /// Spin-up records to discard (lorenz96).
    #[arg(long)]
    spin_up: Option<usize>,
    /// Also write CSV mirrors of binary outputs.
    #[arg(long)]
    csv: Option<bool>,
    /// Input dataset path.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model file path.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Flags {
    fn into_config(self) -> Result<ExperimentConfig, Error> {
        let from_flags = ExperimentConfig {
            experiment: self.experiment,
            scheme: self.scheme,
            epsilon: self.epsilon,
            radius: self.radius,
            sets: self.sets,
            s: self.s,
            m: self.m,
            n: self.n,
            n_c: self.n_c,
            seed: self.seed,
            sinkhorn_tol: self.sinkhorn_tol,
            max_iter: self.max_iter,
            mode: self.mode,
            d: self.d,
            length: self.length,
            bins: self.bins,
            tau_max: self.tau_max,
            dt: self.dt,
            n_steps: self.n_steps,
            use_closure: self.use_closure,
            forcing: self.forcing,
            metric: self.metric,
            spin_up: self.spin_up,
            csv: self.csv,
            data: self.data,
            model: self.model,
            out: self.out,
        };
        let base = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        Ok(base.overlay(from_flags))
    }
}

fn error_kind(error: &Error) -> &'static str {
    match error {
        Error::Parameter(_) => "parameter",
        Error::Data(_) => "data",
        Error::SinkhornDiverged { .. } => "convergence",
        Error::Numerical(_) => "numerical",
        Error::BlowUp { .. } => "blow_up",
        Error::Io { .. } => "io",
        Error::Format { .. } => "format",
    }
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen(flags) => commands::cmd_gen(&flags.into_config()?),
        Command::Fit(flags) => commands::cmd_fit(&flags.into_config()?),
        Command::Sample(flags) => commands::cmd_sample(&flags.into_config()?),
        Command::Closure(flags) => commands::cmd_closure(&flags.into_config()?),
        Command::Diag(flags) => commands::cmd_diag(&flags.into_config()?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            let line = serde_json::json!({
                "error": error_kind(&error),
                "message": error.to_string(),
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
