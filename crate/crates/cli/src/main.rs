//! `iasearch`: cost evaluation, spectra, width search, checkpoint dynamics
//! and synthetic archives from the command line.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 invalid input,
//! 3 infeasible budget.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iasearch_core::Metric;

use crate::commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "iasearch", version, about = "Eigenspectrum-driven channel width search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the MAC or parameter cost of an architecture.
    Cost(CostArgs),
    /// Compute per-tap eigenspectra from an activation archive.
    Spectra(SpectraArgs),
    /// Search channel widths under a budget.
    Search(SearchArgs),
    /// Analyze intrinsic dimensionality across checkpoints.
    Dynamics(DynamicsArgs),
    /// Generate a synthetic activation archive.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct CostArgs {
    #[arg(long)]
    arch: PathBuf,
    #[arg(long, default_value = "macs")]
    metric: Metric,
    /// JSON object mapping tap id to width, replacing the graph's widths.
    #[arg(long)]
    widths: Option<PathBuf>,
    /// Directory for `cost.json` and the run manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON result instead of the summary line.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct SpectraArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Threshold used for the printed dimensionality summary.
    #[arg(long, default_value_t = iasearch_core::DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    arch: PathBuf,
    /// Directory of `<tap>.spectrum.json` files.
    #[arg(long)]
    spectra: PathBuf,
    #[arg(long, default_value_t = iasearch_core::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value = "macs")]
    metric: Metric,
    /// Resource budget; defaults to the cost of the input architecture.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long, default_value_t = 32)]
    multiple: u32,
    /// Width floor; defaults to `--multiple`.
    #[arg(long)]
    min_width: Option<u32>,
    #[arg(long, default_value_t = 1e-4)]
    omega_precision: f64,
    #[arg(long)]
    no_greedy_fill: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DynamicsArgs {
    /// Directory of `<iteration>.spectra.json` files.
    #[arg(long)]
    series: PathBuf,
    #[arg(long, default_value_t = iasearch_core::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Learning-rate decay iterations, comma separated.
    #[arg(long, value_delimiter = ',')]
    decay_iters: Vec<u64>,
    #[arg(long, default_value_t = iasearch_core::dynamics::DEFAULT_WINDOW)]
    window: u64,
    #[arg(long, default_value_t = iasearch_core::dynamics::DEFAULT_MIN_FRACTION)]
    min_fraction: f64,
    #[arg(long, default_value_t = iasearch_core::dynamics::DEFAULT_HORIZON)]
    horizon: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cost(a) => commands::cost(&a.arch, a.metric, a.widths.as_deref(), a.out.as_deref(), a.json),
        Command::Spectra(a) => commands::spectra(&a.archive, &a.out, a.threads, a.threshold),
        Command::Search(a) => commands::search(commands::SearchOptions {
            arch: a.arch,
            spectra: a.spectra,
            threshold: a.threshold,
            metric: a.metric,
            budget: a.budget,
            multiple: a.multiple,
            min_width: a.min_width.unwrap_or(a.multiple),
            omega_precision: a.omega_precision,
            greedy_fill: !a.no_greedy_fill,
            out: a.out,
        }),
        Command::Dynamics(a) => commands::dynamics(commands::DynamicsOptions {
            series: a.series,
            threshold: a.threshold,
            decay_iters: a.decay_iters,
            window: a.window,
            min_fraction: a.min_fraction,
            horizon: a.horizon,
            out: a.out,
        }),
        Command::Synth(a) => commands::synth(&a.spec, &a.out, a.seed, a.threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Input(_) => 2,
        CliError::Infeasible(_) => 3,
        CliError::Output { .. } => 1,
    }
}
