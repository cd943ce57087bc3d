//! `qmeasure`: validate, refine, dilate, compose, complete, simulate and
//! verify measurement descriptions stored as JSON manifests.
//!
//! Exit status is 0 when every check passes, 1 when a physical invariant
//! fails and 2 when an input cannot be read or parsed.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Options;
use report::Report;

#[derive(Parser)]
#[command(
    name = "qmeasure",
    version,
    about = "Complete quantum measurements in finite dimension"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Absolute tolerance for every residual check.
    #[arg(long, global = true, default_value_t = qmeasure::DEFAULT_TOL)]
    tol: f64,
    /// Print the report as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Output file for commands that produce one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the chain's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the chain's number of trials.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Also write simulated frequencies as CSV.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// z-score threshold for simulation checks.
    #[arg(long, global = true, default_value_t = qmeasure::montecarlo::DEFAULT_Z_THRESHOLD)]
    z: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Check a file against its invariants.
    Validate { path: PathBuf },
    /// Maximal rank-1 refinement of a POVM.
    Refine { povm: PathBuf },
    /// Minimal pure measurement model of an instrument.
    Dilate { instrument: PathBuf },
    /// Sequential joint instrument: first, then second.
    Compose { first: PathBuf, second: PathBuf },
    /// Two-stage complete measurement of a POVM's refinement.
    Complete {
        povm: PathBuf,
        multiplicity: PathBuf,
    },
    /// Monte Carlo run of a chain against its exact statistics.
    Simulate { chain: PathBuf },
    /// Re-check a model, joint or complete-measurement file.
    Verify {
        path: PathBuf,
        /// Instrument the file is expected to realize.
        #[arg(long)]
        instrument: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Refine { .. } => "refine",
            Command::Dilate { .. } => "dilate",
            Command::Compose { .. } => "compose",
            Command::Complete { .. } => "complete",
            Command::Simulate { .. } => "simulate",
            Command::Verify { .. } => "verify",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = Options {
        tol: cli.tol,
        out: cli.out,
        csv: cli.csv,
        seed: cli.seed,
        trials: cli.trials,
        z: cli.z,
    };
    let result = match &cli.command {
        Command::Validate { path } => commands::validate(path, &opts),
        Command::Refine { povm } => commands::refine_cmd(povm, &opts),
        Command::Dilate { instrument } => commands::dilate(instrument, &opts),
        Command::Compose { first, second } => commands::compose(first, second, &opts),
        Command::Complete { povm, multiplicity } => commands::complete(povm, multiplicity, &opts),
        Command::Simulate { chain } => commands::simulate(chain, &opts),
        Command::Verify { path, instrument } => {
            commands::verify(path, instrument.as_deref(), &opts)
        }
    };
    let (report, code) = match result {
        Ok(r) => {
            let code = if r.passed { 0 } else { 1 };
            (r, code)
        }
        Err(f) => (Report::failed(cli.command.name(), &f), f.exit_code()),
    };
    if cli.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    if let Some(e) = &report.error {
        eprintln!("error: {e}");
    }
    ExitCode::from(code)
}
