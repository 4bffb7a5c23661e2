//! `dynamo` — variance-driven rollout allocation and a synthetic GRPO
//! training loop with gradient-aware advantage modulation.
//!
//! Subcommands:
//! - `allocate`: turn a JSONL success history into an integer rollout plan.
//! - `simulate`: run the synthetic training loop, emitting metrics CSV and
//!   a JSON summary per seed.
//! - `verify`: run seeded invariant suites and report pass/fail.
//! - `report`: merge metric CSVs into a comparison table.
//!
//! Exit codes: 0 success, 1 validation error, 2 property failure,
//! 3 numeric abort.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_PROPERTY: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser)]
#[command(
    name = "dynamo",
    version,
    about = "Variance-driven rollout allocation and advantage modulation sandbox"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a rollout allocation plan from historical success counts.
    Allocate(AllocateArgs),
    /// Run the synthetic training loop.
    Simulate(SimulateArgs),
    /// Run a named invariant suite (or `all`).
    Verify(VerifyArgs),
    /// Summarize metric CSVs side by side.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct AllocateArgs {
    /// History JSONL: one {"problem_id", "total", "correct"} object per line.
    #[arg(long, value_name = "PATH", conflicts_with = "snapshot")]
    pub history: Option<PathBuf>,
    /// Priority snapshot JSON ({"priorities": {..}, "insufficient": [..]})
    /// as an alternative to raw history.
    #[arg(long, value_name = "PATH")]
    pub snapshot: Option<PathBuf>,
    /// Total rollout budget (default: 16 per problem).
    #[arg(long)]
    pub budget: Option<u64>,
    /// Minimum rollouts per problem.
    #[arg(long, default_value_t = 8)]
    pub min: u64,
    /// Maximum rollouts per problem.
    #[arg(long, default_value_t = 24)]
    pub max: u64,
    /// Minimum history before a priority counts as reliable.
    #[arg(long, default_value_t = 2)]
    pub min_history: u64,
    /// Ignore priorities and split the budget evenly (baseline mode).
    #[arg(long)]
    pub uniform: bool,
    /// Skip invalid history lines (reported to stderr) instead of aborting.
    #[arg(long)]
    pub permissive: bool,
    /// Write the plan JSON here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Allow overwriting existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory for manifest, metrics, and summaries.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
    /// Seeds to run (comma-separated); defaults to the config's seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Disable components: dra, gc, ums, or all (repeatable/comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
    /// Export per-token modulation traces alongside the metrics.
    #[arg(long)]
    pub trace: bool,
    /// Write the final policy table JSON per seed.
    #[arg(long)]
    pub save_policy: bool,
    /// Allow overwriting existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Suite name: stats, allocator, policy, grpo, modulation, convergence,
    /// or all.
    pub suite: String,
    /// Seed for the suite's random generators.
    #[arg(long, default_value_t = 0xD1A0)]
    pub seed: u64,
    /// Also write the machine-readable verdict JSON here.
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
    /// Allow overwriting existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Metric CSV files produced by `simulate`.
    #[arg(required = true, value_name = "CSV")]
    pub inputs: Vec<PathBuf>,
    /// Also write the comparison table as CSV.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Allow overwriting existing output files.
    #[arg(long)]
    pub force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Allocate(args) => commands::cmd_allocate(args),
        Command::Simulate(args) => commands::cmd_simulate(args),
        Command::Verify(args) => commands::cmd_verify(args),
        Command::Report(args) => commands::cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            commands::fail_to_stderr(&failure);
            ExitCode::from(failure.code as u8)
        }
    }
}
