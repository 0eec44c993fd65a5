use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcra::cli::{execute, Command};

#[derive(Parser)]
#[command(name = "mcra", version, about = "Spectrum allocation and joint power control and routing")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Allocate sub-bands and report feasibility.
    Spectrum {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the `[dsa]` seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Minimize the total cost from the uniform state.
    Optimize {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Overrides the `[optimizer]` seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convexity and gradient checks.
    Check {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Reference cost of a small instance.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
    },
}

fn main() -> ExitCode {
    let command = match Args::parse().command {
        Cmd::Spectrum { scenario, out, seed } => Command::Spectrum { scenario, out, seed },
        Cmd::Optimize { scenario, out, tol, max_iters, seed } => {
            Command::Optimize { scenario, out, tol, max_iters, seed }
        }
        Cmd::Check { scenario } => Command::Check { scenario },
        Cmd::Oracle { scenario, restarts } => Command::Oracle { scenario, restarts },
    };
    let code = match execute(&command, &mut std::io::stdout().lock()) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprint!("{}", e.record());
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
