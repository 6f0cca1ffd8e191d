use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use regobs::commands::{self, default_counterexample, Command, RunOptions, DEFAULT_RESOLUTION};
use regobs::scenario::Scenario;
use regobs::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "regobs", version, about = "Regional observability of 2D Neumann diffusion systems")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Strategic-sensor tests in the domain and region bases
    Check(Args),
    /// Simulate plant and observer, write trajectory and norm series
    Simulate(Args),
    /// Sensor that is strategic for the region but not for the domain
    Counterexample(Args),
    /// Margin heatmap over sensor positions
    Scan(Args),
    /// Estimator construction residuals
    Verify(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// Scenario file (dotted keys)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the report and CSV files
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Scan grid nodes per axis
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// Overrides the scenario seed
    #[arg(long)]
    seed: Option<u64>,
    /// Scan worker threads (default: available parallelism)
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn load(command: Command, args: &Args) -> Result<Scenario> {
    let mut scenario = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
            Scenario::parse(&text)?
        }
        None if command == Command::Counterexample => default_counterexample(),
        None => Scenario::default(),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn execute(command: Command, args: &Args) -> Result<String> {
    let scenario = load(command, args)?;
    let opts = RunOptions {
        resolution: args.resolution,
        workers: args.workers,
    };
    let report = commands::run(command, &scenario, &args.out, &opts)?;
    let json = report.to_json();
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("report.json"), format!("{json}\n"))?;
    Ok(json)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Check(a) => (Command::Check, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Counterexample(a) => (Command::Counterexample, a),
        Cmd::Scan(a) => (Command::Scan, a),
        Cmd::Verify(a) => (Command::Verify, a),
    };
    match execute(command, args) {
        Ok(json) => {
            println!("{json}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
