//! `ssd`: experiment runner, slope estimator and acceptance suite.

use clap::{Parser, Subcommand};
use ssd::experiment::{run_experiment, slope_estimate, ExperimentConfig, Summary};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ssd", about = "stochastic sequential dual solvers", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep from a config file (flags win over the file).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the regime (det_convex | sto_convex | det_strongly_convex | sto_strongly_convex).
        #[arg(long)]
        regime: Option<String>,
        /// Override the horizons, comma-separated.
        #[arg(long)]
        horizons: Option<String>,
        /// Override the seeds: a count or a comma-separated list.
        #[arg(long)]
        seeds: Option<String>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the log-log rate slope of a summary CSV.
    Slope {
        #[arg(long)]
        summary: PathBuf,
    },
    /// Run the acceptance suite (optionally a subset, e.g. --only 1,4,10).
    Accept {
        #[arg(long)]
        only: Option<String>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> ssd::Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            regime,
            horizons,
            seeds,
            out,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            if let Some(r) = regime {
                cfg.regime = Some(r);
            }
            if let Some(h) = horizons {
                cfg.horizons = h
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| ssd::SsdError::InvalidConfig(format!("--horizons: {e}")))?;
            }
            if let Some(s) = seeds {
                cfg.seeds = if s.contains(',') {
                    s.split(',')
                        .map(|v| v.trim().parse::<u64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| ssd::SsdError::InvalidConfig(format!("--seeds: {e}")))?
                } else {
                    let count: u64 = s
                        .parse()
                        .map_err(|e| ssd::SsdError::InvalidConfig(format!("--seeds: {e}")))?;
                    (0..count).collect()
                };
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            cfg.validate()?;
            let summary = run_experiment(&cfg)?;
            println!(
                "wrote {} cells to {}",
                cfg.horizons.len() * cfg.seeds.len(),
                cfg.out_dir.display()
            );
            print!("{}", summary.to_csv());
            Ok(true)
        }
        Command::Slope { summary } => {
            let text = std::fs::read_to_string(&summary)?;
            let s = Summary::parse_csv(&text)?;
            let pts: Vec<(usize, f64)> = s.rows.iter().map(|&(n, g, _)| (n, g)).collect();
            let slope = slope_estimate(&pts)?;
            println!("{slope}");
            Ok(true)
        }
        Command::Accept { only } => {
            let filter: Option<Vec<usize>> = match only {
                Some(list) => Some(
                    list.split(',')
                        .map(|s| s.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| ssd::SsdError::InvalidConfig(format!("--only: {e}")))?,
                ),
                None => None,
            };
            let results = ssd::accept::run_all(filter.as_deref());
            let mut all_pass = !results.is_empty();
            for r in &results {
                println!("{}", r.line());
                all_pass &= r.pass;
            }
            println!(
                "{}/{} criteria passed",
                results.iter().filter(|r| r.pass).count(),
                results.len()
            );
            Ok(all_pass)
        }
    }
}
