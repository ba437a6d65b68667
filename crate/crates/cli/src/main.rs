use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use matchscore::montecarlo::Profile;
use matchscore::{Model, SpecKind};

mod commands;
mod config;
mod error;

use config::{DeConfigFlags, RunConfig};
use error::{CliError, Result};

/// Simulate two-sided matching markets and estimate match-production
/// coefficients by maximum score.
///
/// Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
/// 1 other errors (I/O).
#[derive(Debug, Parser)]
#[command(name = "matchscore", version, about, long_about)]
struct Cli {
    /// TOML run configuration; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, env = "MATCHSCORE_JOBS")]
    jobs: Option<usize>,

    /// Base seed for market generation and the optimizer.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a market, solve its equilibrium and check stability.
    Simulate(MarketArgs),
    /// Estimate (beta1, beta2) on one observed market.
    Estimate(EstimateArgs),
    /// Evaluate the objective on a (beta1, beta2) grid.
    Grid(EstimateArgs),
    /// Run Monte Carlo experiments over a scenario grid.
    Experiment(ExperimentArgs),
    /// Run an IR-weight sweep (same as `experiment --sweep lambda=...`, without the base grid).
    Sweep(ExperimentArgs),
    /// Run the unmatched-share scan over true beta2 in -1.0..-3.0 (step -0.1).
    Scan(ExperimentArgs),
}

#[derive(Debug, Args, Clone, Default)]
struct MarketArgs {
    /// Agents per side.
    #[arg(long)]
    n: Option<usize>,
    /// Production function form: case1 or case2.
    #[arg(long)]
    case: Option<SpecKind>,
    /// True beta1 (default 0.5).
    #[arg(long, allow_negative_numbers = true)]
    beta1: Option<f64>,
    /// True beta2 (default -2).
    #[arg(long, allow_negative_numbers = true)]
    beta2: Option<f64>,
    /// Matching-cost scale for case2 (default 8).
    #[arg(long, allow_negative_numbers = true)]
    kappa: Option<f64>,
}

#[derive(Debug, Args, Clone, Default)]
struct ScoreArgs {
    /// Observed data: ut, t, u or none.
    #[arg(long)]
    model: Option<Model>,
    /// Add IR rows to the objective (true/false).
    #[arg(long, action = ArgAction::Set)]
    ir: Option<bool>,
    /// Weight on satisfied IR rows (at least 1 when IR rows are used; default 100).
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    /// Score IR rows as f >= 0 even when transfers are observed.
    #[arg(long, action = ArgAction::Set)]
    ir_ignore_transfers: Option<bool>,
}

#[derive(Debug, Args, Clone, Default)]
struct DeArgs {
    /// Differential-evolution population size (default 400).
    #[arg(long)]
    population: Option<usize>,
    /// Differential-evolution generations (default 300).
    #[arg(long)]
    generations: Option<usize>,
    /// Mutation scale F in (0, 2] (default 0.8).
    #[arg(long)]
    differential_weight: Option<f64>,
    /// Binomial crossover rate in [0, 1] (default 0.9).
    #[arg(long)]
    crossover_rate: Option<f64>,
}

impl DeArgs {
    fn flags(&self) -> DeConfigFlags {
        DeConfigFlags {
            population: self.population,
            generations: self.generations,
            differential_weight: self.differential_weight,
            crossover_rate: self.crossover_rate,
        }
    }
}

#[derive(Debug, Args, Clone, Default)]
struct EstimateArgs {
    #[command(flatten)]
    market: MarketArgs,
    /// Read the market from this JSON file instead of generating one.
    #[arg(long, value_name = "FILE", requires = "outcome_file")]
    market_file: Option<PathBuf>,
    /// Observed outcome JSON matching --market-file.
    #[arg(long, value_name = "FILE", requires = "market_file")]
    outcome_file: Option<PathBuf>,
    #[command(flatten)]
    score: ScoreArgs,
    #[command(flatten)]
    de: DeArgs,
    /// Objective grid axes, e.g. `--grid beta1=-1:2:61 beta2=-10:2:121`.
    #[arg(long, num_args = 1..=2, value_name = "AXIS=START:END:STEPS")]
    grid: Vec<String>,
    /// Also write the inequality rows to inequalities.csv.
    #[arg(long)]
    inequalities: bool,
}

#[derive(Debug, Args, Clone, Default)]
struct ExperimentArgs {
    /// Scenario family defaults: desk (20 replications, n in {10, 50}) or full (100, n up to 100).
    #[arg(long)]
    profile: Option<Profile>,
    /// Comma-separated cases.
    #[arg(long, value_delimiter = ',')]
    case: Vec<SpecKind>,
    /// Comma-separated market sizes.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// True beta1.
    #[arg(long, allow_negative_numbers = true)]
    beta1: Option<f64>,
    /// Comma-separated true beta2 values.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    beta2: Vec<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Comma-separated models.
    #[arg(long, value_delimiter = ',')]
    model: Vec<Model>,
    /// Comma-separated IR settings (true/false).
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, num_args = 1)]
    ir: Vec<bool>,
    /// IR weight for the base grid.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    replications: Option<usize>,
    #[command(flatten)]
    de: DeArgs,
    /// IR-weight sweep, e.g. `lambda=1,2,5,10,20,100` (bare `lambda` uses that list).
    #[arg(long, value_name = "lambda=L1,L2,...")]
    sweep: Option<String>,
    /// Additional scan; only `unmatched-threshold` is available.
    #[arg(long, value_name = "KIND")]
    scan: Option<String>,
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot size the worker pool: {e}")))?;
    }
    let common = commands::Common {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out: cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
    };
    match cli.command {
        Command::Simulate(a) => commands::simulate(&common, &file, &a),
        Command::Estimate(a) => commands::estimate(&common, &file, &a),
        Command::Grid(a) => commands::grid(&common, &file, &a),
        Command::Experiment(a) => commands::experiment(&common, &file, &a, commands::Mode::Experiment),
        Command::Sweep(a) => commands::experiment(&common, &file, &a, commands::Mode::Sweep),
        Command::Scan(a) => commands::experiment(&common, &file, &a, commands::Mode::Scan),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
