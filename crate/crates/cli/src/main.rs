mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tailrisk::asymptotics::Variant;
use tailrisk::oracle::Which;

use config::{Config, Overrides};

/// Tail probabilities of discounted aggregate losses: simulation, exact
/// oracles, asymptotic expansions and ratio diagnostics.
#[derive(Parser)]
#[command(name = "tailrisk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export simulated (S_n, M_n) samples as CSV.
    Simulate(Common),
    /// Estimate P(S_n > x) or P(M_n > x) (JSON).
    Tail(Common),
    /// Exact tail by quadrature for horizons up to 2 (JSON).
    Oracle(Common),
    /// Asymptotic expansion of the model tail (JSON).
    Asympt(Common),
    /// Expansion constants with standard errors (CSV).
    Constants(Common),
    /// Ratio table of the tail against its expansion over a grid (CSV).
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// JSON model configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Monte Carlo sample count.
    #[arg(long)]
    budget: Option<usize>,
    /// Threshold.
    #[arg(long, allow_negative_numbers = true)]
    x: Option<f64>,
    /// Geometric threshold grid `lo:hi:points`.
    #[arg(long)]
    grid: Option<String>,
    /// Tail estimator: crude, conditional, tilted, or oracle (compare only).
    #[arg(long)]
    method: Option<String>,
    /// Base-tail evaluation for expansions: oracle, conditional-mc or asymptote.
    #[arg(long)]
    base: Option<String>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// S (aggregate) or M (running maximum).
    #[arg(long, value_parser = parse_which)]
    which: Option<Which>,
    /// Largest accepted final |ratio - 1| for compare.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    match s {
        "dominated-losses" => Ok(Variant::DominatedLosses),
        "regularly-varying-losses" => Ok(Variant::RegularlyVaryingLosses),
        _ => Err("expected dominated-losses or regularly-varying-losses".into()),
    }
}

fn parse_which(s: &str) -> Result<Which, String> {
    match s {
        "S" | "s" => Ok(Which::S),
        "M" | "m" => Ok(Which::M),
        _ => Err("expected S or M".into()),
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Tail(c) => ("tail", c),
        Command::Oracle(c) => ("oracle", c),
        Command::Asympt(c) => ("asympt", c),
        Command::Constants(c) => ("constants", c),
        Command::Compare(c) => ("compare", c),
    };
    let mut config = Config::load(&common.config)?;
    config.apply(Overrides {
        seed: common.seed,
        workers: common.workers,
        budget: common.budget,
        x: common.x,
        grid: common.grid.clone(),
        method: common.method.clone(),
        base: common.base.clone(),
        variant: common.variant,
        which: common.which,
        tolerance: common.tolerance,
    });
    let outcome = match name {
        "simulate" => commands::simulate(&config),
        "tail" => commands::tail(&config),
        "oracle" => commands::oracle(&config),
        "asympt" => commands::asympt(&config),
        "constants" => commands::constants(&config),
        _ => commands::compare(&config),
    }
    .with_context(|| format!("{name} failed"))?;
    match &common.out {
        Some(path) => std::fs::write(path, &outcome.output)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => std::io::stdout().write_all(outcome.output.as_bytes())?,
    }
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
