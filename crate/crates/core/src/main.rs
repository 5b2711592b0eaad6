use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use byzsgd::cli::{cmd_check, cmd_run, cmd_toy};

#[derive(Parser)]
#[command(name = "byzsgd", version, about = "Byzantine-tolerant distributed SGD simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write per-iteration metrics as CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte-Carlo tolerance verdict and attack-condition checks.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reproduce the one-dimensional median and Krum counterexamples.
    Toy,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, &out, seed).map(|summary| {
            if summary.diverged {
                eprintln!("run diverged after {} iterations", summary.rows);
            }
            true
        }),
        Command::Check { config, trials, seed } => cmd_check(&config, trials, seed).map(|report| {
            print!("{report}");
            true
        }),
        Command::Toy => cmd_toy().map(|(report, ok)| {
            print!("{report}");
            ok
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
