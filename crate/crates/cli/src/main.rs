use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod plot;

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "diffda", version, about = "Twin experiments for diffusion-proposal particle filters")]
struct Cli {
    /// TOML configuration; every key has a default (see `print-config`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for particle propagation (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Directory holding inputs and outputs of the run.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum DenoiserKind {
    Analytic,
    Mlp,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    None,
    Unconditional,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate truth, observations and a training trajectory.
    Generate,
    /// Fit the MLP denoiser on the training trajectory.
    Train,
    /// Run the particle filter over the generated observations.
    Assimilate {
        #[arg(long, value_enum, default_value = "mlp")]
        denoiser: DenoiserKind,
        #[arg(long, value_enum, default_value = "none")]
        baseline: Baseline,
    },
    /// Render SVG figures from metric tables.
    Plot {
        /// Metric tables to draw; defaults to the filter and baseline tables in --out.
        metrics: Vec<PathBuf>,
    },
    /// Print the resolved configuration as TOML.
    PrintConfig,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::config(format!("--workers: {e}")))?;
    }
    let cfg = commands::load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Generate => commands::generate(&cfg, &cli.out),
        Command::Train => commands::train(&cfg, &cli.out),
        Command::Assimilate { denoiser, baseline } => commands::assimilate(&cfg, &cli.out, denoiser, baseline),
        Command::Plot { metrics } => commands::plot(&cli.out, &metrics),
        Command::PrintConfig => {
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
