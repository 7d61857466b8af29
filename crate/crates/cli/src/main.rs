//! Batch front-end for the stochastic Chaplygin ball: one subcommand per
//! verification suite, deterministic output files, exhaustive exit codes
//! (0 pass, 1 quantitative failure, 2 usage/config error, 3 numerical
//! abort).

mod commands;
mod config;
mod output;
mod tolerances;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CmdContext, CmdError};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "chapball", version, about = "Stochastic Chaplygin ball on SO(n): simulation and drift verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analytic identity suite (gradient identities, torsion,
    /// metricity, horizontality) and write verify.json.
    Verify(CommonArgs),
    /// Integrate a path ensemble and write snapshot rows to simulate.csv.
    Simulate(CommonArgs),
    /// Compare the analytic generator with one-step Monte-Carlo estimates.
    GeneratorTest(CommonArgs),
    /// Fit the sphere-projection decay rate of the homogeneous ball.
    SphereTest(CommonArgs),
    /// Evaluate the Hamiltonization condition on random inertias.
    HamCheck(CommonArgs),
    /// Tabulate drift-theorem residuals over random group points.
    DriftReport(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for path ensembles.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Overrides integrator.master_seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(command: &Command) -> Result<bool, CmdError> {
    let (args, runner): (&CommonArgs, fn(&CmdContext) -> Result<bool, CmdError>) = match command {
        Command::Verify(a) => (a, commands::cmd_verify),
        Command::Simulate(a) => (a, commands::cmd_simulate),
        Command::GeneratorTest(a) => (a, commands::cmd_generator_test),
        Command::SphereTest(a) => (a, commands::cmd_sphere_test),
        Command::HamCheck(a) => (a, commands::cmd_ham_check),
        Command::DriftReport(a) => (a, commands::cmd_drift_report),
    };
    let (config, config_bytes) = ExperimentConfig::load(&args.config)?;
    if args.workers == 0 {
        return Err(CmdError::Config("--workers must be at least 1".into()));
    }
    let ctx = CmdContext {
        config: &config,
        config_bytes: &config_bytes,
        workers: args.workers,
        seed: args.seed.unwrap_or(config.integrator.master_seed),
    };
    runner(&ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(CmdError::Config(msg)) | Err(CmdError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CmdError::Numerical(msg)) => {
            eprintln!("numerical abort: {msg}");
            ExitCode::from(3)
        }
    }
}
