use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use morseflow::scenario::{self, Status};

/// Run set-oriented analyses of random dynamical systems from scenario files.
#[derive(Parser)]
#[command(name = "morseflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario (bundled name or TOML path).
    Run {
        scenario: String,
        /// Output directory; overrides the scenario and the environment.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario and list every problem found.
    Validate { scenario: String },
    /// Print the names of the bundled scenarios.
    ListScenarios,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::ListScenarios => {
            for (name, _) in scenario::BUNDLED {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { scenario } => {
            let cfg = scenario::load(&scenario)?;
            match cfg.validate() {
                Ok(()) => {
                    println!("{}: ok", cfg.name);
                    Ok(ExitCode::SUCCESS)
                }
                Err(problems) => {
                    for p in problems {
                        eprintln!("{p}");
                    }
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Command::Run { scenario, out } => {
            let cfg = scenario::load(&scenario)?;
            let dir = out.unwrap_or_else(|| scenario::output_dir(&cfg));
            let report =
                scenario::run(&cfg, &dir).with_context(|| format!("running {}", cfg.name))?;
            for o in &report.outcomes {
                let status = match &o.status {
                    Status::Passed => "passed".to_string(),
                    Status::Finding(m) => format!("finding: {m}"),
                    Status::Failed { code, message } => format!("FAILED [{code}]: {message}"),
                };
                println!(
                    "{:<24} {:<20} {:>8.2}s  {status}",
                    o.id,
                    o.op,
                    o.elapsed.as_secs_f64()
                );
            }
            for w in &report.warnings {
                println!("warning: {w}");
            }
            println!(
                "outputs in {} ({:.2}s)",
                dir.display(),
                report.elapsed.as_secs_f64()
            );
            Ok(if report.has_errors() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
    }
}
