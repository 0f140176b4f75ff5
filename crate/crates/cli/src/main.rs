use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdforge_cli::commands::{self, Globals};

#[derive(Parser)]
#[command(name = "pdforge", version, about = "Constrained primal-dual training and duality certificates on finite Text2SQL suites")]
struct Cli {
    /// Config file (TOML with `schema_version`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location: run root for train/certify, suite file for
    /// generate, CSV for score, plot directory for report.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Disable parallel scoring and sampling.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task suite from a generator spec.
    Generate,
    /// Run primal-dual training.
    Train,
    /// Solve dual and primal exactly and check the duality gap.
    Certify,
    /// Score external responses against a suite.
    Score {
        #[arg(long)]
        suite: PathBuf,
        /// JSON Lines file of {"task_id": ..., "response": ...}.
        #[arg(long)]
        responses: PathBuf,
    },
    /// Plot training curves and summarize a run directory.
    Report { run_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let globals = Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        deterministic: cli.deterministic,
    };
    let result = match &cli.command {
        Command::Generate => commands::generate(&globals),
        Command::Train => commands::train(&globals),
        Command::Certify => commands::certify(&globals),
        Command::Score { suite, responses } => commands::score(&globals, suite, responses),
        Command::Report { run_dir } => commands::report(&globals, run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
