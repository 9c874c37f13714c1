mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use infrelax::penalties::PenaltyKind;

use commands::{BoundCommand, BoundFlags};

/// Lower bounds by policy simulation and dual upper bounds by information
/// relaxation for the predictable-returns portfolio problem.
///
/// Exit codes: 0 success, 2 input error, 3 solve failure, 4 consistency
/// failure, 5 resource guard.
#[derive(Parser)]
#[command(name = "infrelax", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a published parameter set as JSON.
    GenParams {
        id: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the grid recursion and write a value grid file.
    Solve {
        /// Solve config, or a bare parameter file from gen-params.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        print_config: bool,
    },
    /// Simulated value of the grid policy; appends one CSV row.
    Lower(BoundArgs),
    /// Penalized perfect-foresight bound; appends one CSV row.
    Upper(BoundArgs),
    /// Zero-mean check of a penalty under the grid policy.
    Feasibility(BoundArgs),
    /// Exact duality checks on a finite MDP given as JSON.
    VerifyFinite {
        mdp: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate CSV rows from lower and upper.
    Report {
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Value grid file written by solve.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, value_parser = parse_penalty)]
    penalty: Option<PenaltyKind>,
    /// Must match the grid's gamma.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Antithetic pairs per run (pairs in total for feasibility).
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// CSV file to append to (JSON report for feasibility); stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full estimate as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    print_config: bool,
}

fn parse_penalty(s: &str) -> Result<PenaltyKind, String> {
    s.parse()
}

impl From<BoundArgs> for BoundFlags {
    fn from(a: BoundArgs) -> Self {
        BoundFlags {
            config: a.config,
            grid: a.grid,
            penalty: a.penalty,
            gamma: a.gamma,
            seed: a.seed,
            paths: a.paths,
            runs: a.runs,
            workers: a.workers,
            out: a.out,
            json: a.json,
            print_config: a.print_config,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenParams { id, out } => commands::gen_params(id, out.as_deref()),
        Command::Solve {
            config,
            gamma,
            workers,
            out,
            print_config,
        } => commands::solve(config.as_deref(), gamma, workers, out.as_deref(), print_config),
        Command::Lower(a) => commands::bounds(BoundCommand::Lower, &a.into()),
        Command::Upper(a) => commands::bounds(BoundCommand::Upper, &a.into()),
        Command::Feasibility(a) => commands::bounds(BoundCommand::Feasibility, &a.into()),
        Command::VerifyFinite { mdp, out } => commands::verify_finite(&mdp, out.as_deref()),
        Command::Report { csv, out } => commands::report(&csv, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
