use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use steinflow::harness::{
    bench_timing, diagnose, gaussian_oracle, log_log_slope, parse_config, run_experiment, sweep, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "steinflow",
    version,
    about = "Seeded regularized SVGD experiments with CSV output"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write one row per replicate and recorded iteration.
    Run { config: PathBuf },
    /// Run every (nu, particles) combination; writes a summary to run.output.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        nu: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        particles: Vec<usize>,
    },
    /// Time the regularized update against nu = 1 at each particle count.
    Bench {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        counts: Vec<usize>,
    },
    /// Compare particles with the closed-form Gaussian covariance recursion.
    GaussianOracle {
        config: PathBuf,
        #[arg(long)]
        delta: f64,
    },
    /// Write only the KSD and regularized-KSD trajectory.
    Diagnose { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(parse_config(&text)?)
}

fn execute(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let results = run_experiment(&cfg)?;
            let rows: usize = results.iter().map(|r| r.rows.len()).sum();
            eprintln!("wrote {rows} rows to {}", cfg.output.display());
        }
        Command::Sweep { config, nu, particles } => {
            let cfg = load(&config)?;
            let summary = sweep(&cfg, &nu, &particles)?;
            for row in &summary {
                eprintln!(
                    "nu={} N={}: log10 mse h1={:.3} h2={:.3} h3={:.3}",
                    row.nu, row.particles, row.log10_mse[0], row.log10_mse[1], row.log10_mse[2]
                );
            }
            eprintln!("wrote summary to {}", cfg.output.display());
        }
        Command::Bench { config, counts } => {
            let cfg = load(&config)?;
            let rows = bench_timing(&cfg, &counts)?;
            let n: Vec<f64> = rows.iter().map(|r| r.particles as f64).collect();
            let overhead: Vec<f64> = rows.iter().map(|r| r.overhead_ms).collect();
            match log_log_slope(&n, &overhead) {
                Some(slope) => eprintln!("overhead log-log slope {slope:.3}"),
                None => eprintln!("no slope fit (need two or more points with positive overhead)"),
            }
            eprintln!("wrote {} rows to {}", rows.len(), cfg.output.display());
        }
        Command::GaussianOracle { config, delta } => {
            let cfg = load(&config)?;
            let run = gaussian_oracle(&cfg, delta)?;
            let worst = run.rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
            eprintln!("max relative covariance error {worst:.4e}");
            eprintln!("wrote {} rows to {}", run.rows.len(), cfg.output.display());
        }
        Command::Diagnose { config } => {
            let cfg = load(&config)?;
            let results = diagnose(&cfg)?;
            let rows: usize = results.iter().map(|r| r.rows.len()).sum();
            eprintln!("wrote {rows} rows to {}", cfg.output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
