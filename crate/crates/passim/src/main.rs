use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use passim::{solve_count_report, Manifest, RunOptions, Task};

#[derive(Parser)]
#[command(name = "passim", version, about = "Correlation-based passive imaging experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Source seed; overrides `source.seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate states and the correlation kernel at the ground truth.
    Forward(RunArgs),
    /// Dot-product test of the derivative against the backpropagator.
    AdjointTest(RunArgs),
    /// Linearization-error scan along a parameter direction.
    TccScan(RunArgs),
    /// Landweber reconstruction from simulated data.
    Reconstruct(RunArgs),
    /// Manufactured-solution convergence test of the PDE solver.
    SolverTest(RunArgs),
    /// Print extended-adjoint versus direct-baseline solve counts of a run.
    Report {
        /// manifest.json written by a previous run.
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (task, args) = match cli.command {
        Command::Forward(a) => (Task::Forward, a),
        Command::AdjointTest(a) => (Task::AdjointTest, a),
        Command::TccScan(a) => (Task::TccScan, a),
        Command::Reconstruct(a) => (Task::Reconstruct, a),
        Command::SolverTest(a) => (Task::SolverTest, a),
        Command::Report { manifest } => {
            return match Manifest::read(&manifest).and_then(|m| solve_count_report(&m)) {
                Ok(s) => {
                    println!("{s}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            };
        }
    };
    let opts = RunOptions { output: args.output, threads: args.threads, seed: args.seed };
    match passim::run(task, &args.config, &opts) {
        Ok(outcome) => {
            for a in &outcome.manifest.assertions {
                println!("{} {}: {:e} ({})", if a.passed { "ok  " } else { "FAIL" }, a.name, a.value, a.bound);
            }
            println!("outputs written to {}", outcome.output_dir.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
