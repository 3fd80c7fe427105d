use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msp_perf::{cmd_simulate, cmd_solve, cmd_sweep, cmd_validate, Options};

#[derive(Parser)]
#[command(name = "msp-perf", version, about = "Performance model of container platforms on leased VMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// System config file.
    #[arg(long)]
    config: PathBuf,
    /// Output stem; writes <stem>.csv and <stem>.json instead of CSV on stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and replications.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the analytic model once.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Solve over a grid of one or two parameters.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Sweep spec file.
        #[arg(long)]
        spec: PathBuf,
    },
    /// Run the discrete-event simulator.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides sim.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the analytic model against the simulator.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Overrides sim.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Relative tolerance; overrides sim.tol.
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn options(c: Common) -> Options {
    Options {
        config: c.config,
        out: c.out,
        jobs: c.jobs,
        ..Options::default()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MSP_PERF_LOG", "warn")).init();
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let exit = match cli.command {
        Command::Solve { common } => cmd_solve(&options(common), &mut stdout),
        Command::Sweep { common, spec } => cmd_sweep(
            &Options {
                spec: Some(spec),
                ..options(common)
            },
            &mut stdout,
        ),
        Command::Simulate { common, seed } => cmd_simulate(&Options { seed, ..options(common) }, &mut stdout),
        Command::Validate { common, seed, tol } => cmd_validate(
            &Options {
                seed,
                tol,
                ..options(common)
            },
            &mut stdout,
        ),
    };
    ExitCode::from(exit.code() as u8)
}
