use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use bridgekit::cli::{
    cmd_bridge_gaussian, cmd_bridge_grid, cmd_reproduce, cmd_residuals, cmd_simulate,
    ReproduceExample,
};

/// Schrödinger bridges over Markovian priors and their zero-noise
/// optimal-transport limits.
#[derive(Parser)]
#[command(name = "bridgekit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the closed-form Gaussian bridge and export it as JSON.
    BridgeGaussian {
        /// Scenario configuration file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the prior's diffusion intensity.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Override the scenario output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the Schrödinger system on the configured spatial grid.
    BridgeGrid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo simulation of a stored bridge.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Bridge JSON produced by bridge-gaussian.
        #[arg(long)]
        bridge: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce a worked example (mean-shift or smoluchowski).
    Reproduce {
        /// Which example to run.
        example: ReproduceExample,
        /// Comma-separated diffusion intensities (example-specific default).
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        /// Output directory.
        #[arg(long, default_value = "bridgekit-reproduce")]
        out: PathBuf,
    },
    /// Optimality-certificate residuals and action values for a scenario.
    Residuals {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_default_env()
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) =>
        {
            print!("{err}");
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.command {
        Command::BridgeGaussian {
            config,
            epsilon,
            out,
        } => cmd_bridge_gaussian(&config, epsilon, out.as_deref()),
        Command::BridgeGrid {
            config,
            epsilon,
            out,
        } => cmd_bridge_grid(&config, epsilon, out.as_deref()),
        Command::Simulate {
            config,
            bridge,
            seed,
            out,
        } => cmd_simulate(&config, &bridge, seed, out.as_deref()),
        Command::Reproduce {
            example,
            epsilons,
            out,
        } => cmd_reproduce(example, epsilons, &out),
        Command::Residuals {
            config,
            epsilon,
            out,
        } => cmd_residuals(&config, epsilon, out.as_deref()),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
