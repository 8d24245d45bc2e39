use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eacause::pipeline::{load_config, run_stage, LoadedConfig, RunOptions, Stage};

/// Causal effect of epileptiform-activity burden on discharge outcome.
#[derive(Parser)]
#[command(name = "eacause", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with ground truth.
    Simulate(Common),
    /// Fit per-patient Hill parameters.
    FitPd(Common),
    /// Smooth EA streams and compute burden summaries and treatment flags.
    Burden(Common),
    /// Learn matching metrics and build matched groups.
    Match(Common),
    /// Estimate average potential outcomes with bootstrap intervals.
    Estimate(Common),
    /// Unobserved-confounding, quantization and granular-binning analyses.
    Sensitivity(Common),
    /// Naive, regression and propensity estimators plus the missingness check.
    Baselines(Common),
    /// Consolidated summary and plot data for a run directory.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; each stage writes into its own subdirectory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Cohort directory; defaults to `<out>/simulate`.
    #[arg(long)]
    input: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (Stage, Common) {
        match self {
            Command::Simulate(c) => (Stage::Simulate, c),
            Command::FitPd(c) => (Stage::FitPd, c),
            Command::Burden(c) => (Stage::Burden, c),
            Command::Match(c) => (Stage::Match, c),
            Command::Estimate(c) => (Stage::Estimate, c),
            Command::Sensitivity(c) => (Stage::Sensitivity, c),
            Command::Baselines(c) => (Stage::Baselines, c),
            Command::Report(c) => (Stage::Report, c),
        }
    }
}

fn run(stage: Stage, args: Common) -> eacause::Result<()> {
    let config = match &args.config {
        Some(p) => load_config(p)?,
        None => LoadedConfig::default(),
    };
    let opts = RunOptions {
        config,
        seed: args.seed,
        out: args.out,
        input: args.input,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .expect("thread pool");
    let outcome = pool.install(|| run_stage(stage, &opts))?;
    println!("{}", outcome.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EACAUSE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (stage, args) = cli.command.split();
    match run(stage, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
