use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use en2as_cli::{cmd_compare, cmd_inspect, cmd_search};

#[derive(Parser)]
#[command(
    name = "en2as",
    about = "Novelty-driven one-shot architecture search experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Run one seeded search and write result.json, trace.jsonl, and
    /// archive.txt into the output directory.
    Search {
        /// Experiment config (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Master seed; falls back to EN2AS_SEED, then the config value
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a controller-by-selector comparison grid and write per-run
    /// JSONs, summary.csv, and long.jsonl.
    Compare {
        /// Comparison plan (TOML)
        #[arg(long)]
        plan: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Parallel runs
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Pretty-print an archive snapshot, run result, or genotype file.
    Inspect {
        /// Path to the file to inspect
        path: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message; usage errors exit 1 here.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match cli.command {
        Commands::Search { config, seed, out } => cmd_search(&config, seed, &out).map(Some),
        Commands::Compare { plan, out, jobs } => cmd_compare(&plan, &out, jobs).map(Some),
        Commands::Inspect { path } => {
            let stdout = std::io::stdout();
            cmd_inspect(&path, &mut stdout.lock()).map(|_| None)
        }
    };
    match outcome {
        Ok(Some(summary)) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
