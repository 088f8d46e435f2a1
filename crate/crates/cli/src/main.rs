//! trajopt: trajectory optimization for implicitly time-stepped systems.
//!
//! `run` executes a configured experiment and writes trajectory.csv,
//! report.csv, and summary.txt; `check` verifies the analytic derivatives of
//! the configured system against finite-difference and dense-solve oracles.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 ran but did not converge.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Experiment, ExperimentConfig, HessianName};
use trajopt::check::{run_checks, CheckStatus};
use trajopt::optimizer::optimize;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NO_CONVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "trajopt", version, about = "Trajectory optimization via trajectory sensitivity analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the configured problem and write result files.
    Run(RunArgs),
    /// Verify analytic derivatives at the initial iterate.
    Check(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file.
    config: PathBuf,
    /// Write outputs here instead of the configured [output] dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the Hessian mode: gn, full, or gd.
    #[arg(long, value_parser = HessianName::parse_flag)]
    hessian: Option<HessianName>,
    /// Override the sensitivity worker-thread count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct CheckArgs {
    /// Experiment configuration file.
    config: PathBuf,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Check(args) => check(args),
    }
    .unwrap_or_else(|code| code)
}

fn load_experiment(path: &Path) -> Result<Experiment, ExitCode> {
    let parsed = ExperimentConfig::load(path).map_err(config_failure)?;
    parsed.build().map_err(config_failure)
}

fn config_failure(e: ConfigError) -> ExitCode {
    eprintln!("configuration error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn run(args: RunArgs) -> Result<ExitCode, ExitCode> {
    let mut experiment = load_experiment(&args.config)?;
    if let Some(mode) = args.hessian {
        experiment.optimizer.hessian_mode = mode.to_mode();
    }
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(config_failure(ConfigError("--threads must be >= 1".into())));
        }
        experiment.optimizer.threads = threads;
    }
    let out_dir = args.output_dir.unwrap_or(experiment.output_dir.clone());

    let (u_opt, report) = optimize(
        experiment.system.as_ref(),
        &experiment.objective,
        &experiment.initial_controls,
        &experiment.initial_conditions,
        &experiment.optimizer,
    )
    .map_err(|e| {
        eprintln!("numerical failure: {e}");
        ExitCode::from(EXIT_NUMERICAL)
    })?;

    let x_opt = trajopt::simulate::rollout(
        experiment.system.as_ref(),
        &u_opt,
        &experiment.initial_conditions,
    )
    .map_err(|e| {
        eprintln!("numerical failure re-simulating the result: {e}");
        ExitCode::from(EXIT_NUMERICAL)
    })?;

    std::fs::create_dir_all(&out_dir).map_err(|e| {
        eprintln!("cannot create output directory {}: {e}", out_dir.display());
        ExitCode::from(EXIT_CONFIG)
    })?;
    let io_failure = |e: std::io::Error| {
        eprintln!("cannot write outputs: {e}");
        ExitCode::from(EXIT_NUMERICAL)
    };
    output::write_trajectory(&out_dir.join("trajectory.csv"), &x_opt, &u_opt)
        .map_err(io_failure)?;
    output::write_report(&out_dir.join("report.csv"), &report, experiment.timing_in_csv)
        .map_err(io_failure)?;
    output::write_summary(
        &out_dir.join("summary.txt"),
        &experiment.system_name,
        &experiment.optimizer.hessian_mode.to_string(),
        experiment.seed,
        &report,
    )
    .map_err(io_failure)?;

    println!(
        "{}: {} accepted iterations, final objective {:.6e}, gradient inf-norm {:.3e} ({})",
        experiment.system_name,
        report.accepted_iterations(),
        report.final_objective().unwrap_or(f64::NAN),
        report.final_grad_norm().unwrap_or(f64::NAN),
        report.termination,
    );
    println!("outputs written to {}", out_dir.display());

    if report.termination.converged() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("did not converge: {}", report.termination);
        Ok(ExitCode::from(EXIT_NO_CONVERGENCE))
    }
}

fn check(args: CheckArgs) -> Result<ExitCode, ExitCode> {
    let experiment = load_experiment(&args.config)?;
    let checks = run_checks(
        experiment.system.as_ref(),
        &experiment.objective,
        &experiment.initial_controls,
        &experiment.initial_conditions,
    )
    .map_err(|e| {
        eprintln!("numerical failure while checking: {e}");
        ExitCode::from(EXIT_NUMERICAL)
    })?;

    let mut all_ok = true;
    for c in &checks {
        match c.status {
            CheckStatus::Passed => {
                println!(
                    "PASS {:<42} max err {:.3e} (tol {:.0e})",
                    c.name, c.error, c.tolerance
                );
            }
            CheckStatus::Failed => {
                all_ok = false;
                let detail = if c.detail.is_empty() {
                    String::new()
                } else {
                    format!(" [{}]", c.detail)
                };
                println!(
                    "FAIL {:<42} max err {:.3e} (tol {:.0e}){detail}",
                    c.name, c.error, c.tolerance
                );
            }
            CheckStatus::Skipped => {
                println!("SKIP {:<42} {}", c.name, c.detail);
            }
        }
    }

    if all_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("derivative checks failed");
        Ok(ExitCode::from(EXIT_NUMERICAL))
    }
}
