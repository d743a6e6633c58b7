use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smrl_core::harness::{self, ExperimentConfig, HarnessError, RollPolicy, RunOptions};
use smrl_core::theoremlab::{self, VerificationReport};

#[derive(Parser)]
#[command(name = "smrl", version, about = "Reward-smoothing experiments for model-based RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every seed of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the latest checkpoints in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// One run per value of a config key, e.g. `--axis smoothing.sigma --values 1,2,3`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long)]
        values: String,
        #[arg(long)]
        resume: bool,
    },
    /// Run the numerical checks on kernels, returns, potentials and policies.
    Verify {
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Play episodes with a fixed policy and write them as JSON lines.
    Roll {
        #[arg(long)]
        env: String,
        #[arg(long, default_value = "scripted")]
        policy: RollPolicy,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render SVG charts from every metrics.csv below a directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_VERIFY: u8 = 2;

fn options(resume: bool) -> Result<RunOptions, HarnessError> {
    Ok(RunOptions {
        resume,
        seed_offset: harness::seed_offset_from_env()?,
        progress: true,
        ..RunOptions::default()
    })
}

/// Prints failed checks and returns the process status for the report.
fn report_status(report: &VerificationReport) -> u8 {
    let failed: Vec<_> = report.entries.iter().filter(|e| !e.pass).collect();
    println!("{} checks, {} failed", report.entries.len(), failed.len());
    for e in &failed {
        println!("FAIL {} {} max_err={:e}", e.check, e.params, e.max_err);
    }
    if failed.is_empty() {
        0
    } else {
        EXIT_VERIFY
    }
}

fn execute(command: Command) -> Result<ExitCode, HarnessError> {
    match command {
        Command::Run { config, resume } => {
            let config = ExperimentConfig::load(&config)?;
            let summary = harness::run(&config, &options(resume)?)?;
            for s in &summary.seeds {
                println!(
                    "seed {}: {} env steps, {} gradient steps, first success {}",
                    s.seed,
                    s.env_steps,
                    s.gradient_steps,
                    s.first_success.map_or("none".to_string(), |t| t.to_string())
                );
            }
            println!("artifacts in {}", config.out_dir.display());
        }
        Command::Sweep { config, axis, values, resume } => {
            let base = ExperimentConfig::load(&config)?;
            let values = harness::parse_sweep_values(&values);
            for summary in harness::sweep(&base, &axis, &values, &options(resume)?)? {
                println!("{}: {}", summary.manifest.name, summary.manifest.config.out_dir.display());
            }
        }
        Command::Verify { report } => {
            let result = theoremlab::verify_all(report.as_deref()).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            return Ok(ExitCode::from(report_status(&result)));
        }
        Command::Roll { env, policy, out, episodes, seed } => {
            let seed = seed.wrapping_add(harness::seed_offset_from_env()?);
            let eps = harness::roll(&env, policy, episodes, seed, &out)?;
            let total: f64 = eps.iter().map(|e| e.raw_return()).sum();
            println!("{} episodes, mean return {:.3}, written to {}", eps.len(), total / eps.len().max(1) as f64, out.display());
        }
        Command::Plot { input, out } => {
            for path in harness::plot_dir(&input, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
