use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qkdsdp_cli::runner::{self, RunArgs};

#[derive(Parser)]
#[command(name = "qkdsdp", version, about = "Certified key-rate sweeps from Gram-matrix SDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a JSON config.
    Run {
        config: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        verbose: bool,
        /// Write every solved SDP as plain text into this directory.
        #[arg(long, value_name = "DIR")]
        dump_sdp: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run { config, jobs, verbose, dump_sdp } = cli.command;
    let level = if verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match runner::run(&config, &RunArgs { jobs, dump_sdp }) {
        Ok(outcome) => {
            if verbose {
                eprintln!("wrote {} and {}", outcome.csv_path.display(), outcome.report_path.display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
