use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use obrbsde::runner::{apply_overrides, parse_scenario, run, RunOptions, EXIT_CONFIG};

/// Worker threads for the parallel parts of a run; defaults to all cores.
const WORKERS_ENV: &str = "OBRBSDE_WORKERS";

#[derive(Parser)]
#[command(name = "obrbsde", version, about = "Switching-game RBSDE solver and verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tasks of a scenario file and write reports.
    Solve {
        scenario: PathBuf,
        /// Parent of the run directory (overrides the scenario's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed (overrides the scenario's `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated task names or kinds to run.
        #[arg(long, value_delimiter = ',')]
        tasks: Option<Vec<String>>,
        /// Verification tolerance for saddle, value and minimality checks.
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

fn configure_workers() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .with_context(|| format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    match cli.command {
        Command::Solve {
            scenario,
            out,
            seed,
            tasks,
            tolerance,
        } => {
            let parsed = match parse_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprint!("{e}");
                    return ExitCode::from(EXIT_CONFIG as u8);
                }
            };
            let opts = RunOptions {
                out_dir: out,
                seed,
                tasks,
                tolerance,
            };
            let s = match apply_overrides(parsed, &opts) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG as u8);
                }
            };
            match run(&s) {
                Ok(outcome) => {
                    for t in &outcome.tasks {
                        let msg = t.message.as_deref().unwrap_or("");
                        println!("{:<16} {:<8?} {:>8.3}s {msg}", t.name, t.status, t.wall_seconds);
                    }
                    println!("reports: {}", outcome.run_dir.display());
                    ExitCode::from(outcome.exit_code as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_CONFIG as u8)
                }
            }
        }
    }
}
