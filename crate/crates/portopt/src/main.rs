use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use portopt::commands::{self, Overrides, ReplicateArgs};
use portopt_core::optim::OptimizerKind;
use portopt_core::projection::ProjectionKind;

/// Gradient-descent portfolio optimizer over simplex-constrained
/// weights: scenario runs, multiplier sweeps, and replication studies.
#[derive(Parser)]
#[command(name = "portopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the scenario's random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output artifacts (default: the scenario's
    /// output_dir, else ./out).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override the scenario's pre-weight projection.
    #[arg(long, global = true, value_enum)]
    projection: Option<ProjectionArg>,
    /// Override the scenario's optimizer.
    #[arg(long, global = true, value_enum)]
    optimizer: Option<OptimizerArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a scenario and write weights, metrics, trace, and
    /// cumulative returns. Exits 0 only if every hard constraint holds.
    Run {
        scenario: PathBuf,
    },
    /// Train once per multiplier combination from a grid file and write
    /// sweep.csv.
    Sweep {
        scenario: PathBuf,
        /// JSON grid: {"axes": [{"term": "ucits10", "values": [...]}]}.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Compare training against the brute-force simplex grid on random
    /// sub-problems and write replication.csv.
    Replicate {
        scenario: PathBuf,
        /// Number of random simulations.
        #[arg(long)]
        k: usize,
        /// Smallest sampled asset universe.
        #[arg(long)]
        min_assets: usize,
        /// Largest sampled asset universe (default: min(5, panel width)).
        #[arg(long)]
        max_assets: Option<usize>,
        /// Simplex grid resolution for the exact baseline.
        #[arg(long, default_value_t = 0.01)]
        oracle_step: f64,
        /// Shortest sampled time window (default: half the panel).
        #[arg(long)]
        min_window: Option<usize>,
    },
    /// Generate a synthetic returns CSV from a market-spec JSON.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProjectionArg {
    Softmax,
    Sparsemax,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Gd,
    Adam,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir,
        projection: cli.projection.map(|p| match p {
            ProjectionArg::Softmax => ProjectionKind::Softmax,
            ProjectionArg::Sparsemax => ProjectionKind::Sparsemax,
        }),
        optimizer: cli.optimizer.map(|o| match o {
            OptimizerArg::Gd => OptimizerKind::Gd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        }),
    };

    let outcome = match cli.command {
        Command::Run { scenario } => match commands::run(&scenario, &overrides) {
            Ok(result) => {
                for row in &result.report.compliance {
                    println!(
                        "constraint {}: residual={} satisfied={}",
                        row.label, row.residual, row.satisfied
                    );
                }
                println!(
                    "final_loss={} nonzero_weights={}",
                    result.report.final_loss,
                    result.report.weights.len(),
                );
                if result.report.all_constraints_satisfied() {
                    Ok(())
                } else {
                    // Ran fine, but a hard constraint is violated.
                    return ExitCode::from(1);
                }
            }
            Err(e) => Err(e),
        },
        Command::Sweep { scenario, grid } => {
            commands::sweep(&scenario, &grid, &overrides).map(|path| {
                println!("sweep written to {}", path.display());
            })
        }
        Command::Replicate { scenario, k, min_assets, max_assets, oracle_step, min_window } => {
            let args =
                ReplicateArgs { runs: k, min_assets, max_assets, oracle_step, min_window };
            commands::replicate(&scenario, &args, &overrides).map(|path| {
                println!("replication written to {}", path.display());
            })
        }
        Command::Synth { spec, out } => commands::synth(&spec, &out, cli.seed).map(|()| {
            println!("panel written to {}", out.display());
        }),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", commands::single_line(&e.to_string()));
            ExitCode::from(2)
        }
    }
}
