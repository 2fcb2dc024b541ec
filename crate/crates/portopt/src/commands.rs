//! The four CLI workflows: run, sweep, replicate, synth.
//!
//! Each returns a structured result so it can be driven both from
//! `main` and from tests; exit-code policy lives with the caller. Error
//! messages are single-line and prefixed with a category so scripts can
//! parse failures.

use std::fs;
use std::path::{Path, PathBuf};

use portopt_core::engine::{
    self, EngineError, GridSpec, LossSpec, ReplicationConfig, TrainConfig,
};
use portopt_core::oracle::OracleError;
use portopt_core::panel::{synthesize, ReturnsPanel, SyntheticMarketSpec};
use portopt_core::projection::ProjectionKind;
use portopt_core::optim::OptimizerKind;
use thiserror::Error;

use crate::io::{self, DataError};
use crate::report::{write_artifacts, ArtifactPaths, RunReport};
use crate::scenario::{ScenarioError, ScenarioFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("train: {0}")]
    Train(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Data(inner) => CliError::Data(inner.to_string()),
            ScenarioError::Panel(inner) => CliError::Data(inner.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Write { .. } => CliError::Io(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::InvalidSpec(_)
            | EngineError::InvalidConfig(_)
            | EngineError::UnknownTerm(_) => CliError::Config(e.to_string()),
            other => CliError::Train(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Train(e.to_string())
    }
}

/// Global flag overrides applied on top of the scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub projection: Option<ProjectionKind>,
    pub optimizer: Option<OptimizerKind>,
}

/// A loaded scenario: panel, resolved loss spec, training config, and
/// the effective output directory.
pub struct PreparedScenario {
    pub panel: ReturnsPanel,
    pub spec: LossSpec,
    pub cfg: TrainConfig,
    pub out_dir: PathBuf,
}

pub fn prepare(scenario_path: &Path, overrides: &Overrides) -> Result<PreparedScenario, CliError> {
    let scenario = ScenarioFile::load(scenario_path)?;
    let scenario_dir = scenario_path.parent().unwrap_or(Path::new("."));
    let panel = scenario.load_data(scenario_dir)?;
    let spec = scenario.loss_spec(&panel)?;
    let mut cfg = scenario.train.clone();
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(projection) = overrides.projection {
        cfg.projection = projection;
    }
    if let Some(optimizer) = overrides.optimizer {
        cfg.optimizer = optimizer;
    }
    let out_dir = overrides
        .out_dir
        .clone()
        .or(scenario.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(PreparedScenario { panel, spec, cfg, out_dir })
}

pub struct RunResult {
    pub report: RunReport,
    pub paths: ArtifactPaths,
}

/// Trains the scenario and writes the four artifacts. The caller maps
/// `report.all_constraints_satisfied()` onto the exit code.
pub fn run(scenario_path: &Path, overrides: &Overrides) -> Result<RunResult, CliError> {
    let prepared = prepare(scenario_path, overrides)?;
    let trace = engine::train(&prepared.spec, &prepared.panel, &prepared.cfg)?;
    let compliance =
        engine::compliance(&prepared.spec, &prepared.panel, &trace.final_weights)?;
    let report = RunReport::build(&prepared.panel, &trace, compliance);
    let paths = write_artifacts(&prepared.out_dir, &report, &trace)?;
    Ok(RunResult { report, paths })
}

/// Runs the multiplier sweep and writes `sweep.csv`: one row per
/// combination with the objective, each residual, and the feasibility
/// flag. Per-row failures are recorded in the row's `error` column.
pub fn sweep(
    scenario_path: &Path,
    grid_path: &Path,
    overrides: &Overrides,
) -> Result<PathBuf, CliError> {
    let prepared = prepare(scenario_path, overrides)?;
    let grid_raw = fs::read_to_string(grid_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", grid_path.display())))?;
    let grid: GridSpec = serde_json::from_str(&grid_raw)
        .map_err(|e| CliError::Config(format!("malformed grid file: {e}")))?;
    let rows = engine::grid_search(&prepared.spec, &grid, &prepared.panel, &prepared.cfg)?;

    let constraint_labels: Vec<String> = prepared
        .spec
        .term_labels()
        .into_iter()
        .skip(prepared.spec.objectives.len())
        .collect();
    let mut out = String::from("row");
    for axis in &grid.axes {
        out.push_str(&format!(",lambda_{}", axis.term));
    }
    out.push_str(",objective");
    for label in &constraint_labels {
        out.push_str(&format!(",residual_{label}"));
    }
    out.push_str(",feasible,error\n");
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&format!("{i}"));
        for lambda in &row.lambdas {
            out.push_str(&format!(",{lambda}"));
        }
        match &row.outcome {
            Ok(outcome) => {
                out.push_str(&format!(",{}", outcome.objective));
                for c in &outcome.compliance {
                    out.push_str(&format!(",{}", c.residual));
                }
                out.push_str(&format!(",{},", outcome.feasible));
            }
            Err(e) => {
                out.push(',');
                for _ in &constraint_labels {
                    out.push(',');
                }
                out.push_str(&format!(",,{}", single_line(&e.to_string())));
            }
        }
        out.push('\n');
    }
    let path = prepared.out_dir.join("sweep.csv");
    io::write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

/// Extra knobs for `replicate` beyond the scenario itself.
#[derive(Debug, Clone)]
pub struct ReplicateArgs {
    pub runs: usize,
    pub min_assets: usize,
    /// Defaults to `min(5, panel width)`: the oracle enumerates a full
    /// simplex grid per run.
    pub max_assets: Option<usize>,
    pub oracle_step: f64,
    pub min_window: Option<usize>,
}

/// Runs the replication study and writes `replication.csv` with one row
/// per simulation plus a trailing mean row.
pub fn replicate(
    scenario_path: &Path,
    args: &ReplicateArgs,
    overrides: &Overrides,
) -> Result<PathBuf, CliError> {
    let prepared = prepare(scenario_path, overrides)?;
    let rep = ReplicationConfig {
        runs: args.runs,
        min_assets: args.min_assets,
        max_assets: args.max_assets.unwrap_or_else(|| prepared.panel.n_assets().min(5)),
        min_window: args.min_window.unwrap_or_else(|| prepared.panel.periods() / 2),
        oracle_step: args.oracle_step,
        seed: prepared.cfg.seed,
    };
    let summary =
        engine::replication_study(&prepared.panel, &prepared.spec, &prepared.cfg, &rep)?;
    let mut out = String::from("run,assets,window_start,window_len,weight_mse,objective_gap\n");
    for row in &summary.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.run,
            row.asset_indices.len(),
            row.window.0,
            row.window.1,
            row.weight_mse,
            row.objective_gap
        ));
    }
    out.push_str(&format!(
        "mean,,,,{},{}\n",
        summary.mean_weight_mse, summary.mean_objective_gap
    ));
    let path = prepared.out_dir.join("replication.csv");
    io::write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

/// Generates a synthetic panel from a market-spec JSON and writes it as
/// a wide returns CSV with a BENCHMARK column.
pub fn synth(spec_path: &Path, out_path: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let raw = fs::read_to_string(spec_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", spec_path.display())))?;
    let mut spec: SyntheticMarketSpec = serde_json::from_str(&raw)
        .map_err(|e| CliError::Config(format!("malformed market spec: {e}")))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let panel = synthesize(&spec).map_err(|e| CliError::Data(e.to_string()))?;
    io::save_panel(out_path, &panel, "BENCHMARK")?;
    Ok(())
}

/// Collapses a message onto one line for machine-parsable stderr.
pub fn single_line(msg: &str) -> String {
    msg.replace('\n', "; ")
}
