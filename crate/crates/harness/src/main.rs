use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perfopt_harness::check::theory_check;
use perfopt_harness::config::load_config;
use perfopt_harness::oracle::run_oracles;
use perfopt_harness::run::{output_dir, run_experiment, MANIFEST_NAME, TOOL_VERSION};
use perfopt_harness::sweep::{merge_axes, run_sweep, Axis, SUMMARY_NAME};
use perfopt_harness::{ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(name = "perfopt", version, about = "Optimization under model-induced distribution shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config and write CSVs, charts and a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cross-product of `--over key=v1,v2` axes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required = true)]
        over: Vec<Axis>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate constants, audit the step-size schedule and run the
    /// sensitivity and snapshot-bias checks.
    Check {
        #[arg(long)]
        config: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference gradient and exact snapshot-bias oracles.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        gradient_trials: usize,
        #[arg(long, default_value_t = 50)]
        bias_trials: usize,
    },
    /// Print the tool version.
    Version,
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = load_config(path)?;
    cfg.apply_env_overrides()?;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run { config, workers, out } => {
            let mut cfg = load(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
                cfg.validate()?;
            }
            let dir = output_dir(&cfg, out.as_deref());
            let manifest = run_experiment(&cfg, &dir)?;
            for s in &manifest.seeds {
                match (&s.error, &s.csv) {
                    (Some(e), _) => eprintln!("seed {}: failed: {e}", s.seed),
                    (None, Some(csv)) => println!(
                        "seed {}: final risk {:e}, grad_norm_sq {:e} -> {}",
                        s.seed,
                        s.final_risk.unwrap_or(f64::NAN),
                        s.final_grad_norm_sq.unwrap_or(f64::NAN),
                        dir.join(csv).display()
                    ),
                    (None, None) => {}
                }
            }
            println!("manifest: {}", dir.join(MANIFEST_NAME).display());
            failures(manifest.failed(), manifest.seeds.len())
        }
        Command::Sweep { config, over, workers, out } => {
            let cfg = load(&config)?;
            let dir = output_dir(&cfg, out.as_deref());
            let manifests = run_sweep(&config, &merge_axes(over), &dir, workers.unwrap_or(cfg.workers))?;
            println!("summary: {}", dir.join(SUMMARY_NAME).display());
            let failed = manifests.iter().map(|m| m.failed()).sum();
            let total = manifests.iter().map(|m| m.seeds.len()).sum();
            failures(failed, total)
        }
        Command::Check { config, json } => {
            let report = theory_check(&load(&config)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Data(e.to_string()))?);
            } else {
                println!("{report}");
            }
            Ok(if report.audit_holds() { 0 } else { 2 })
        }
        Command::Oracle {
            config,
            gradient_trials,
            bias_trials,
        } => {
            let report = run_oracles(&load(&config)?, gradient_trials, bias_trials)?;
            println!(
                "gradient: {} trials, max relative error {:e}",
                report.gradient_trials, report.gradient_max_rel_error
            );
            println!("snapshot bias: {} pairs, max residual {:e}", report.bias_trials, report.bias_max_residual);
            println!("{}", if report.pass() { "PASS" } else { "FAIL" });
            Ok(if report.pass() { 0 } else { 2 })
        }
        Command::Version => {
            println!("perfopt {TOOL_VERSION}");
            Ok(0)
        }
    }
}

fn failures(failed: usize, total: usize) -> Result<u8> {
    if failed > 0 {
        let e = HarnessError::RunsFailed { failed, total };
        eprintln!("error: {e}");
        return Ok(e.exit_code() as u8);
    }
    Ok(0)
}
