use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grl_harness::config::{ExperimentConfig, MetricKind, CLASS_KINDS, ENV_KINDS};
use grl_harness::error::{HarnessError, EXIT_FAILURE, EXIT_OK, EXIT_PROPERTY};
use grl_harness::run::{run, RunOptions};
use grl_harness::sweep::{config_paths, sweep};
use grl_harness::verify::verify;

#[derive(Parser)]
#[command(
    name = "grl-lab",
    version,
    about = "Simulation lab for history-based reinforcement learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides n_seeds from the config.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Also write one CSV per seed.
        #[arg(long)]
        per_seed: bool,
    },
    /// Check the numerical properties of the library.
    Verify {
        /// Only run properties whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Run every *.toml config in a directory.
    Sweep {
        #[arg(long)]
        config_dir: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Describe the environments and classes a config can name.
    ListEnvs,
    /// Describe the agents and metrics a config can name.
    ListAgents,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn execute(command: Command) -> Result<i32, HarnessError> {
    match command {
        Command::Run {
            config,
            seeds,
            out,
            workers,
            per_seed,
        } => {
            let config = ExperimentConfig::load(&config)?.resolve()?;
            let options = RunOptions {
                seeds,
                workers,
                per_seed,
            };
            let (record, files) = run(&config, &out, &options)?;
            println!(
                "{}: {} series in {:.2}s -> {}",
                config.name,
                record.series.len(),
                record.wall_clock_seconds,
                files.csv.display()
            );
            Ok(EXIT_OK)
        }
        Command::Verify { filter } => {
            let outcomes = verify(filter.as_deref());
            if outcomes.is_empty() {
                return Err(HarnessError::invalid("no property matches the filter"));
            }
            let mut failed = 0;
            for o in &outcomes {
                match &o.result {
                    Ok(()) => println!("ok    {}", o.name),
                    Err(witness) => {
                        failed += 1;
                        println!("FAIL  {}: {witness}", o.name);
                    }
                }
            }
            println!("{} passed, {failed} failed", outcomes.len() - failed);
            Ok(if failed == 0 { EXIT_OK } else { EXIT_PROPERTY })
        }
        Command::Sweep {
            config_dir,
            out,
            workers,
        } => {
            let paths = config_paths(&config_dir)?;
            let options = RunOptions {
                workers,
                ..RunOptions::default()
            };
            let entries = sweep(&paths, &out, &options)?;
            let mut failed = 0;
            for e in &entries {
                match &e.outcome {
                    Ok(r) => println!("ok     {} ({})", e.path.display(), r.config.name),
                    Err(err) => {
                        failed += 1;
                        println!("error  {}: {err}", e.path.display());
                    }
                }
            }
            println!(
                "{} configs, {failed} failed; index at {}",
                entries.len(),
                out.join("index.csv").display()
            );
            Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::ListEnvs => {
            println!("environments:");
            for (k, d) in ENV_KINDS {
                println!("  {k:<40} {d}");
            }
            println!("classes:");
            for (k, d) in CLASS_KINDS {
                println!("  {k:<40} {d}");
            }
            Ok(EXIT_OK)
        }
        Command::ListAgents => {
            println!("agents:");
            for (k, d) in AGENT_KINDS {
                println!("  {k:<40} {d}");
            }
            println!("metrics:");
            for m in MetricKind::ALL {
                println!("  {}", m.name());
            }
            Ok(EXIT_OK)
        }
    }
}

const AGENT_KINDS: &[(&str, &str)] = &[
    ("thompson{eps_schedule}", "samples from the posterior and follows the sample's optimal policy for one effective horizon"),
    ("bayes{eps_plan}", "acts optimally for the Bayes mixture, replanning every step"),
    ("informed{eps_plan}", "acts optimally for the true environment"),
    ("random", "uniform over actions"),
    ("scheduled{schedule}", "fixed action schedule"),
];
