use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pinnforge::harness::{check_grad, registry, run_config, thread_cap, Run, RunConfig};
use pinnforge::parallel::Executor;
use pinnforge::Error;

/// Physics-informed neural network runs from TOML configs.
#[derive(Parser)]
#[command(name = "pinnforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one config; writes report, history, solution and checkpoint.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the problem registry.
    ListProblems,
    /// Compare loss gradients with finite differences at the initial parameters.
    CheckGrad {
        #[arg(long)]
        config: PathBuf,
        /// Largest accepted per-leaf relative error.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_numeric() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListProblems => {
            for p in registry::PROBLEMS {
                println!("{:<20} {}", p.id, p.summary);
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => match run_config(&config, &out, seed, threads) {
            Ok(report) => {
                let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3e}"));
                println!(
                    "{}: {} steps, loss {:.3e}, l1re {}, l2re {}",
                    report.problem,
                    report.steps,
                    report.final_loss.total,
                    show(report.l1re),
                    show(report.l2re)
                );
                for (name, e) in &report.param_errors {
                    println!("  {name}: estimate {:.6} (true {}), rel. error {:.3e}", e.estimate, e.truth, e.l1re);
                }
                for m in &report.meta_errors {
                    println!("  at {}: l2re {:.3e}", m.value, m.l2re);
                }
                println!("artifacts in {}", out.display());
                ExitCode::SUCCESS
            }
            Err(e) => exit_for(&e),
        },
        Command::CheckGrad { config, tol } => {
            let result = RunConfig::load(&config)
                .and_then(Run::from_config)
                .and_then(|run| {
                    let exec = Executor::new(run.config.solve.parallelism, thread_cap(None)?)?;
                    check_grad(&run, &exec)
                });
            match result {
                Ok(rows) => {
                    let mut worst: f64 = 0.0;
                    for r in &rows {
                        println!("{:<14} {:<24} {:.3e}", r.term.name(), r.leaf, r.rel_err);
                        worst = worst.max(r.rel_err);
                    }
                    if worst < tol {
                        println!("ok: max relative error {worst:.3e}");
                        ExitCode::SUCCESS
                    } else {
                        println!("FAILED: max relative error {worst:.3e} exceeds {tol:e}");
                        ExitCode::from(1)
                    }
                }
                Err(e) => exit_for(&e),
            }
        }
    }
}
