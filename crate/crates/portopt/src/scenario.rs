//! Declarative scenario files: data source, projection, training
//! hyperparameters, and the weighted loss terms, as versioned JSON.
//!
//! Group-mask constraints name assets by their panel identifiers; they
//! are resolved to indices against the loaded panel, and unknown names
//! are errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use portopt_core::engine::{
    ConstraintKind, ConstraintTerm, LossSpec, ObjectiveTerm, TrainConfig,
};
use portopt_core::finance::MaskGroup;
use portopt_core::panel::{synthesize, ReturnsPanel, SyntheticMarketSpec};
use thiserror::Error;

use crate::io::{self, DataError, PanelMode, ReturnsKind};

/// Scenario schema revision this build reads.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema_version {found} (this build reads {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("the data block must set exactly one of 'synthetic' or 'csv'")]
    AmbiguousSource,
    #[error("{0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Panel(#[from] portopt_core::panel::PanelError),
    #[error("group mask references unknown asset '{0}'")]
    UnknownAsset(String),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub data: DataSpec,
    pub train: TrainConfig,
    pub objectives: Vec<ObjectiveTerm>,
    #[serde(default)]
    pub constraints: Vec<ScenarioConstraint>,
    /// Default output directory for run artifacts; `--out-dir` overrides.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DataSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticMarketSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSource>,
    /// Return convention the run works in; log returns are derived as
    /// ln(1 + r) (identical to recomputing from price levels).
    #[serde(default)]
    pub returns: ReturnsKind,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CsvSource {
    pub path: PathBuf,
    pub mode: PanelMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
}

/// Constraint terms as written in scenario files. Identical to the
/// engine's terms except that group masks list asset names instead of
/// indices.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConstraint {
    Te { lambda: f64, te_max: f64 },
    Ucits10 { lambda: f64 },
    Ucits540 { lambda: f64 },
    MinWeight { lambda: f64, min_weight: f64 },
    CountRange { lambda: f64, low: usize, high: usize },
    GroupMask { lambda: f64, groups: Vec<NamedGroup> },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct NamedGroup {
    pub assets: Vec<String>,
    pub max_weight: f64,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let raw = fs::read_to_string(path)
            .map_err(|source| ScenarioError::Read { path: path.to_path_buf(), source })?;
        let scenario: ScenarioFile = serde_json::from_str(&raw)?;
        if scenario.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::SchemaVersion { found: scenario.schema_version });
        }
        Ok(scenario)
    }

    /// Builds the panel this scenario runs on. Relative CSV paths are
    /// resolved against the scenario file's directory.
    pub fn load_data(&self, scenario_dir: &Path) -> Result<ReturnsPanel, ScenarioError> {
        match (&self.data.synthetic, &self.data.csv) {
            (Some(spec), None) => {
                let panel = synthesize(spec)?;
                Ok(match self.data.returns {
                    ReturnsKind::Simple => panel,
                    ReturnsKind::Log => panel.to_log_returns()?,
                })
            }
            (None, Some(csv)) => {
                let path = if csv.path.is_absolute() {
                    csv.path.clone()
                } else {
                    scenario_dir.join(&csv.path)
                };
                Ok(io::load_panel(&path, csv.mode, csv.benchmark.as_deref(), self.data.returns)?)
            }
            _ => Err(ScenarioError::AmbiguousSource),
        }
    }

    /// Resolves the loss terms against the panel's asset names.
    pub fn loss_spec(&self, panel: &ReturnsPanel) -> Result<LossSpec, ScenarioError> {
        let index: BTreeMap<&str, usize> =
            panel.assets().iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            let (kind, weight) = match c {
                ScenarioConstraint::Te { lambda, te_max } => {
                    (ConstraintKind::TrackingError { te_max: *te_max }, *lambda)
                }
                ScenarioConstraint::Ucits10 { lambda } => (ConstraintKind::Ucits10, *lambda),
                ScenarioConstraint::Ucits540 { lambda } => (ConstraintKind::Ucits540, *lambda),
                ScenarioConstraint::MinWeight { lambda, min_weight } => {
                    (ConstraintKind::MinWeight { min_weight: *min_weight }, *lambda)
                }
                ScenarioConstraint::CountRange { lambda, low, high } => {
                    (ConstraintKind::CountRange { low: *low, high: *high }, *lambda)
                }
                ScenarioConstraint::GroupMask { lambda, groups } => {
                    let mut resolved = Vec::with_capacity(groups.len());
                    for group in groups {
                        let mut members = Vec::with_capacity(group.assets.len());
                        for name in &group.assets {
                            let idx = index
                                .get(name.as_str())
                                .ok_or_else(|| ScenarioError::UnknownAsset(name.clone()))?;
                            members.push(*idx);
                        }
                        resolved.push(MaskGroup { members, max_weight: group.max_weight });
                    }
                    (ConstraintKind::GroupMask { groups: resolved }, *lambda)
                }
            };
            constraints.push(ConstraintTerm { kind, weight });
        }
        Ok(LossSpec { objectives: self.objectives.clone(), constraints })
    }
}
