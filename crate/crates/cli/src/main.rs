use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vdmfpca::simgen::{DomainDistribution, SimConfig};
use vdmfpca_cli::commands;
use vdmfpca_cli::config::{FitConfig, ScenarioSet};
use vdmfpca_cli::error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "vdmfpca",
    version,
    about = "Multivariate FPCA for functions on subject-specific domains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known truth.
    Simulate {
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Domain length distribution: uniform or nbinom.
        #[arg(long, default_value = "uniform")]
        dist: DomainDistribution,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the variable-domain model to a long CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// JSON config, or the manifest of an earlier fit.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the variable-domain model with the binned baseline on simulated data.
    Benchmark {
        /// JSON scenario set; defaults to the full grid.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Long results CSV; the summary and manifest are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Share of failed replicates above which the benchmark exits non-zero.
const MAX_FAILURE_RATE: f64 = 0.05;

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate {
            n,
            dist,
            sigma,
            seed,
            out,
        } => {
            let (data, truth) = commands::simulate(&SimConfig::new(n, dist, sigma, seed), &out)?;
            eprintln!("wrote {} and {}", data.display(), truth.display());
        }
        Command::Fit { data, config, out } => {
            let cfg = match config {
                Some(p) => FitConfig::load(&p)?,
                None => FitConfig::default(),
            };
            let s = commands::fit(&data, &cfg, &out)?;
            let k: Vec<String> = s.k.iter().map(|(v, k)| format!("{v}={k}")).collect();
            eprintln!(
                "fitted {} subjects; K: {}; M = {}",
                s.n_subjects,
                k.join(", "),
                s.m
            );
        }
        Command::Benchmark {
            scenarios,
            replicates,
            jobs,
            seed,
            out,
        } => {
            let set = match scenarios {
                Some(p) => ScenarioSet::load(&p)?,
                None => ScenarioSet::default(),
            };
            let outcome = commands::benchmark(&set, replicates, jobs, seed, &out)?;
            for m in &outcome.messages {
                eprintln!("{m}");
            }
            eprintln!(
                "{} of {} replicates had failures; results in {}",
                outcome.failed,
                outcome.replicates,
                out.display()
            );
            if outcome.failure_rate() > MAX_FAILURE_RATE {
                return Err(CliError::Benchmark {
                    failed: outcome.failed,
                    total: outcome.replicates,
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
