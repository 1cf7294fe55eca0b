use clap::{Parser, Subcommand};
use sbs_core::commands::{exit_code, run_check, run_measure, run_optimize, run_sweep, CheckOptions};
use sbs_core::io::RunConfig;
use sbs_core::Result;
use std::path::PathBuf;
use std::process::ExitCode;

/// Variational Monte Carlo with string-bond states.
#[derive(Parser)]
#[command(name = "sbs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a state; writes the trajectory CSV and a checkpoint.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint instead of a fresh state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Optimize over the `h_range` fields with warm starts; one CSV row per field.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Measure energy and observables of a checkpoint.
    Measure {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in invariant checks.
    Check {
        /// Corrupt the cache update to confirm the cache check notices.
        #[arg(long, hide = true)]
        fault_cache: bool,
        /// Skip the sweep-cost timing fit.
        #[arg(long)]
        no_timing: bool,
    },
}

const NOT_CONVERGED: u8 = 3;

fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Optimize { config, resume } => {
            let cfg = RunConfig::load(&config)?;
            let summary = run_optimize(&cfg, resume.as_deref())?;
            let last = summary.outcome.rows.last();
            if let Some(r) = last {
                println!("iter {} energy {} +- {} D {} M {}", r.iter, r.energy, r.stderr, r.bond_dim, r.samples);
            }
            if summary.converged() {
                Ok(0)
            } else {
                eprintln!("not converged within max_iter");
                Ok(NOT_CONVERGED)
            }
        }
        Command::Sweep { config } => {
            let cfg = RunConfig::load(&config)?;
            let rows = run_sweep(&cfg)?;
            for r in &rows {
                println!("h {} energy {} +- {} m_x {} m_z2 {} {}", r.h, r.energy, r.stderr, r.m_x, r.m_z2, r.status);
            }
            if rows.iter().any(|r| r.status.starts_with("failed")) {
                Ok(2)
            } else if rows.iter().all(|r| r.converged) {
                Ok(0)
            } else {
                Ok(NOT_CONVERGED)
            }
        }
        Command::Measure { checkpoint, config } => {
            let cfg = RunConfig::load(&config)?;
            for m in run_measure(&cfg, &checkpoint)? {
                println!("{} {} +- {}", m.name, m.mean.re, m.stderr);
            }
            Ok(0)
        }
        Command::Check { fault_cache, no_timing } => {
            let mut out = std::io::stdout().lock();
            let results = run_check(&mut out, CheckOptions { fault_cache, skip_timing: no_timing })?;
            Ok(if results.iter().all(|r| r.passed) { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
