#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use igabem::cli::{exit_code, run, Overrides};

#[derive(Parser)]
#[command(
    name = "igabem",
    version,
    about = "Isogeometric BEM for 3D Helmholtz problems"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON configuration.
    Run {
        config: PathBuf,
        /// Output directory (overrides IGABEM_OUT_DIR and the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long)]
        threads: Option<usize>,
        /// Seed recorded in the manifest.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    match args.command {
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => match run(&config, &Overrides { out, threads, seed }) {
            Ok(m) => {
                eprintln!(
                    "done in {:.1} s, {} artifacts",
                    m.wall_seconds,
                    m.artifacts.len()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e) as u8)
            }
        },
    }
}
