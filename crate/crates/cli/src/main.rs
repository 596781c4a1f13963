use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crest_cli::commands::{cmd_compare, cmd_run, cmd_selftest, cmd_sweep, GlobalFlags};

#[derive(Parser)]
#[command(
    name = "crest",
    version,
    about = "Adaptive mini-batch coreset selection for stochastic gradient training"
)]
struct Cli {
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment described by a config file.
    Run { config: PathBuf },
    /// Compare run directories against a reference run.
    Compare {
        reference: PathBuf,
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Run one experiment per value of a swept parameter.
    Sweep {
        config: PathBuf,
        /// Dotted config key, e.g. trainer.tau.
        param: String,
        #[arg(required = true)]
        values: Vec<String>,
    },
    /// Fast invariant checks of the numerical core.
    Selftest {
        /// Test hook: corrupt a structure to exercise the failure path.
        #[arg(long)]
        inject: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let flags = GlobalFlags {
        seed: cli.seed,
        out: cli.out,
        quiet: cli.quiet,
    };
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config, &flags).map(|_| ()),
        Command::Compare { reference, dirs } => {
            cmd_compare(reference, dirs, flags.quiet).map(|_| ())
        }
        Command::Sweep {
            config,
            param,
            values,
        } => cmd_sweep(config, param, values, &flags).map(|_| ()),
        Command::Selftest { inject } => cmd_selftest(inject.as_deref(), flags.quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
