//! `dfl`: generate data, simulate the multi-server federated protocol,
//! report convergence bounds, and sweep parameters, all driven by one TOML
//! experiment file.
//!
//! Exit codes are a stable contract: 0 success, 2 configuration or
//! precondition error, 3 bound violation on a certified run, 4 numeric
//! failure.

mod commands;
mod config;
mod error;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use commands::SweepParam;
use config::{ExperimentConfig, Overrides, StepSize};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "dfl",
    about = "Simulator and bound checker for multi-server federated learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and report its realized constants.
    GenData(CommonArgs),
    /// Run the protocol, write metrics, and check every certified bound.
    Simulate(CommonArgs),
    /// Print the theoretical constants and bounds without simulating.
    Bounds(CommonArgs),
    /// Re-run the simulation across a list of values for one parameter.
    Sweep(SweepArgs),
}

/// Flags shared by every subcommand. Each one mirrors a config key and
/// wins over the file.
#[derive(Args)]
struct CommonArgs {
    /// Experiment TOML file.
    #[arg(short, long)]
    config: PathBuf,
    /// Override step_size: `auto` or a number.
    #[arg(long)]
    step_size: Option<String>,
    /// Override run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override run.num_epochs.
    #[arg(long)]
    num_epochs: Option<usize>,
    /// Override run.output_dir.
    #[arg(long)]
    output_dir: Option<String>,
    /// Override run.mode: `sequential` or `parallel`.
    #[arg(long)]
    mode: Option<String>,
    /// Record per-step drift and per-iteration consensus logs.
    #[arg(long)]
    record_iterates: bool,
    /// Run even if the step size violates the convergence gate; the run
    /// is then uncertified and bound checks are skipped.
    #[arg(long)]
    override_step_gate: bool,
    /// Echo the normalized effective config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Parameter to sweep: gamma, t_c, t_s, or topology.
    #[arg(long)]
    param: String,
    /// Comma-separated values for the swept parameter.
    #[arg(long)]
    values: String,
}

impl CommonArgs {
    fn overrides(&self) -> Result<Overrides, CliError> {
        let step_size = match &self.step_size {
            Some(text) => Some(StepSize::parse(text)?),
            None => None,
        };
        Ok(Overrides {
            step_size,
            seed: self.seed,
            num_epochs: self.num_epochs,
            output_dir: self.output_dir.clone(),
            mode: self.mode.clone(),
            record_iterates: self.record_iterates,
            override_step_gate: self.override_step_gate,
        })
    }

    fn load(&self) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::load(&self.config, &self.overrides()?)
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::GenData(c) | Command::Simulate(c) | Command::Bounds(c) => c,
        Command::Sweep(s) => &s.common,
    };
    let cfg = common.load()?;
    if common.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match &cli.command {
        Command::GenData(_) => commands::cmd_gen_data(&cfg),
        Command::Simulate(_) => commands::cmd_simulate(&cfg, false).map(|_| ()),
        Command::Bounds(_) => commands::cmd_bounds(&cfg),
        Command::Sweep(s) => {
            let param = SweepParam::parse(&s.param)?;
            commands::cmd_sweep(&cfg, param, &s.values)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
