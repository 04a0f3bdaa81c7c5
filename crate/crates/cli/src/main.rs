//! `cmps`: forward curves, spike-train simulation and estimation, and
//! tomography from measured curves.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::CliError;

#[derive(Parser, Debug)]
#[command(name = "cmps", version, about = "Continuous matrix product state tomography of monitored open systems")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "CMPS_OUT_DIR", default_value = "cmps-out")]
    out_dir: PathBuf,
    /// TOML file whose keys override the subcommand flags; keys may sit at the
    /// top level or in a table named after the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for trajectory batches (default: all cores). Outputs do
    /// not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Emit C2, C3, P0, P1, WTD and noise curves of a model.
    Forward(commands::ForwardArgs),
    /// Simulate detector spike trains by quantum-jump unraveling.
    Simulate(commands::SimulateArgs),
    /// Estimate C2, WTD, P0 and P1 from a spike-train file.
    Estimate(commands::EstimateArgs),
    /// Reconstruct generator data from correlation or counting curves.
    Reconstruct(commands::ReconstructArgs),
    /// Fit quantum-dot rates to a spike train and compare waiting times.
    QdPipeline(commands::QdArgs),
    /// Compare two models or reconstructions through their predicted curves.
    Compare(commands::CompareArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let ctx = config::Context::new(cli.out_dir, cli.config, cli.threads)?;
    match cli.command {
        Command::Forward(a) => commands::forward(&ctx, ctx.merge("forward", a)?),
        Command::Simulate(a) => commands::simulate(&ctx, ctx.merge("simulate", a)?),
        Command::Estimate(a) => commands::estimate(&ctx, ctx.merge("estimate", a)?),
        Command::Reconstruct(a) => commands::reconstruct(&ctx, ctx.merge("reconstruct", a)?),
        Command::QdPipeline(a) => commands::qd_pipeline(&ctx, ctx.merge("qd-pipeline", a)?),
        Command::Compare(a) => commands::compare(&ctx, ctx.merge("compare", a)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
