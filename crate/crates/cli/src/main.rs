use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zrplab::experiment::ExperimentConfig;
use zrplab::experiments::{run_named, ExperimentError, Outcome};

/// Experiments for the weakly asymmetric zero-range process.
///
/// Exit status: 0 when the experiment's acceptance gate passes, 1 when it
/// fails (or the run itself errors), 2 for an unreadable or invalid config.
#[derive(Debug, Parser)]
#[command(name = "zrplab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stationarity of the product measure under the dynamics.
    Invariance(RunArgs),
    /// Mode-1 field statistics and height-increment skewness across beta.
    Crossover(RunArgs),
    /// Relative entropy of Brownian-envelope tubes over lattice sizes.
    EntropyScan(RunArgs),
    /// Coupled envelope/reference runs checked for the height sandwich.
    Sandwich(RunArgs),
    /// Stationary samples and the Gaussian limit of the midpoint height.
    SampleInvariant(RunArgs),
    /// Continuum solver checks.
    SpdeBench(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: config's output.dir, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn split(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Invariance(a) => ("invariance", a),
            Command::Crossover(a) => ("crossover", a),
            Command::EntropyScan(a) => ("entropy-scan", a),
            Command::Sandwich(a) => ("sandwich", a),
            Command::SampleInvariant(a) => ("sample-invariant", a),
            Command::SpdeBench(a) => ("spde-bench", a),
        }
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| format!("cannot read {}: {e}", args.config.display()))?;
    let mut config = ExperimentConfig::from_toml(&text).map_err(|e| e.to_string())?;
    if let Some(seed) = args.seed {
        config.ensemble.seed = seed;
    }
    if let Some(workers) = args.workers {
        config.ensemble.workers = workers;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn write_outputs(dir: &Path, outcome: &Outcome) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in &outcome.files {
        std::fs::write(dir.join(name), body)?;
    }
    let report = format!("{}_report.json", outcome.experiment.replace('-', "_"));
    std::fs::write(dir.join(report), outcome.report_json() + "\n")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = cli.command.split();
    let config = match load(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = args
        .out
        .clone()
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let outcome = match run_named(name, &config) {
        Ok(o) => o,
        Err(ExperimentError::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = write_outputs(&out, &outcome) {
        eprintln!("error: cannot write outputs to {}: {e}", out.display());
        return ExitCode::from(1);
    }
    println!(
        "{name}: {} (config {}, seed {}, outputs in {})",
        if outcome.passed { "PASS" } else { "FAIL" },
        &config.hash()[..12],
        config.ensemble.seed,
        out.display()
    );
    if outcome.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
