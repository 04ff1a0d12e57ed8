use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod output;

use output::MissingInput;

/// Simulate the stochastic 2D Euler equation with transport noise and
/// calibrate the noise amplitude from the generated data.
#[derive(Debug, Parser)]
#[command(name = "saltcal", version)]
struct Cli {
    /// key = value configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `output_dir` from the config).
    #[arg(long, global = true, env = "SALTCAL_OUT")]
    out: Option<PathBuf>,

    /// Override the Brownian seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Spin the forced, damped system up to equilibrium and store the state.
    Spinup,
    /// Generate a high-frequency trajectory.
    Simulate,
    /// Estimate the noise amplitude from the stored trajectory.
    Calibrate {
        /// Also assemble the energy-route Gram matrix (one extra pass per snapshot).
        #[arg(long)]
        energy_route: bool,
        /// Dump the pointwise amplitude ratio for inspection.
        #[arg(long)]
        pointwise: bool,
    },
    /// Scaling study of solution distance against noise perturbation size.
    Robustness,
    /// Summarise every artifact present in the output directory.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<MissingInput>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = commands::Context::load(cli.config.as_deref(), cli.out, cli.seed)?;
    match cli.command {
        Command::Spinup => commands::spinup(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Calibrate {
            energy_route,
            pointwise,
        } => commands::calibrate(&ctx, energy_route, pointwise),
        Command::Robustness => commands::robustness(&ctx),
        Command::Report => commands::report(&ctx),
    }
}
