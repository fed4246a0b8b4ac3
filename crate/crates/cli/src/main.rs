use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use syncfv_cli::{cmd_oracle, cmd_simulate, cmd_sweep_theta, cmd_validate, CliError, ExperimentConfig};

/// Synchronized Fleming-Viot experiments with exact finite-state oracles.
#[derive(Parser)]
#[command(name = "syncfv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured replicas and write records.json / records.csv.
    Simulate(Common),
    /// Write the exact oracle report and survival curve (finite-state models only).
    Oracle(Common),
    /// Run replicas, compare them with the oracle, exit 4 if any criterion fails.
    Validate(Common),
    /// Tabulate h, variance bounds, exact variance and cost over a theta grid.
    SweepTheta(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for replica and particle parallelism.
    #[arg(long)]
    threads: Option<usize>,
}

type Handler = fn(&ExperimentConfig, &std::path::Path) -> Result<String, CliError>;

fn run(cli: Cli) -> Result<String, CliError> {
    let (common, cmd): (&Common, Handler) =
        match &cli.command {
            Command::Simulate(c) => (c, cmd_simulate),
            Command::Oracle(c) => (c, cmd_oracle),
            Command::Validate(c) => (c, cmd_validate),
            Command::SweepTheta(c) => (c, cmd_sweep_theta),
        };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let config = ExperimentConfig::load(&common.config)?;
    cmd(&config, &common.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
