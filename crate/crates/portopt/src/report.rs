//! Run artifacts: weights, metrics, trace, and cumulative returns.
//!
//! All files are UTF-8 with LF line endings and written atomically.
//! Floats are rendered with Rust's shortest round-trip formatting, so
//! re-parsing a file recovers the exact values.

use std::path::{Path, PathBuf};

use portopt_core::engine::{ComplianceRow, MetricReport, TrainTrace};
use portopt_core::panel::ReturnsPanel;

use crate::io::{self, DataError};

/// Everything a training run reports, ready for emission.
#[derive(Debug, Clone)]
pub struct RunReport {
    /// (asset, weight) pairs in panel order, zero-weight assets omitted.
    pub weights: Vec<(String, f64)>,
    pub metrics: MetricReport,
    pub compliance: Vec<ComplianceRow>,
    /// (date, portfolio, benchmark) cumulative returns, compounded as
    /// `prod(1 + r_t) - 1`.
    pub cumulative: Vec<(String, f64, Option<f64>)>,
    pub final_loss: f64,
    pub non_monotonic: bool,
}

impl RunReport {
    pub fn build(panel: &ReturnsPanel, trace: &TrainTrace, compliance: Vec<ComplianceRow>) -> Self {
        let weights: Vec<(String, f64)> = panel
            .assets()
            .iter()
            .zip(trace.final_weights.iter())
            .filter(|(_, w)| **w > 0.0)
            .map(|(name, w)| (name.clone(), *w))
            .collect();
        let portfolio = panel.portfolio_returns(&trace.final_weights);
        let mut cum_p = 1.0;
        let mut cum_b = 1.0;
        let cumulative = panel
            .dates()
            .iter()
            .enumerate()
            .map(|(t, date)| {
                cum_p *= 1.0 + portfolio[t];
                let bench = panel.benchmark().map(|b| {
                    cum_b *= 1.0 + b[t];
                    cum_b - 1.0
                });
                (date.clone(), cum_p - 1.0, bench)
            })
            .collect();
        RunReport {
            weights,
            metrics: trace.report.clone(),
            compliance,
            cumulative,
            final_loss: trace.final_loss(),
            non_monotonic: trace.non_monotonic,
        }
    }

    pub fn all_constraints_satisfied(&self) -> bool {
        self.compliance.iter().all(|row| row.satisfied)
    }
}

/// Paths of the four artifacts inside an output directory.
pub struct ArtifactPaths {
    pub weights: PathBuf,
    pub metrics: PathBuf,
    pub trace: PathBuf,
    pub cumulative: PathBuf,
}

impl ArtifactPaths {
    pub fn new(dir: &Path) -> Self {
        ArtifactPaths {
            weights: dir.join("weights.csv"),
            metrics: dir.join("metrics.txt"),
            trace: dir.join("trace.csv"),
            cumulative: dir.join("cumulative_returns.csv"),
        }
    }
}

/// Writes the four artifacts. Returns the paths written.
pub fn write_artifacts(
    dir: &Path,
    report: &RunReport,
    trace: &TrainTrace,
) -> Result<ArtifactPaths, DataError> {
    let paths = ArtifactPaths::new(dir);

    let mut weights = String::from("asset,weight\n");
    for (name, w) in &report.weights {
        weights.push_str(&format!("{name},{w}\n"));
    }
    io::write_atomic(&paths.weights, weights.as_bytes())?;

    io::write_atomic(&paths.metrics, render_metrics(report).as_bytes())?;

    let mut trace_csv = String::from("epoch,total");
    for label in &trace.term_labels {
        trace_csv.push(',');
        trace_csv.push_str(label);
    }
    trace_csv.push('\n');
    for (epoch, record) in trace.epochs.iter().enumerate() {
        trace_csv.push_str(&format!("{epoch},{}", record.total));
        for term in &record.terms {
            trace_csv.push_str(&format!(",{term}"));
        }
        trace_csv.push('\n');
    }
    io::write_atomic(&paths.trace, trace_csv.as_bytes())?;

    let mut cumulative = String::from(if report.cumulative.iter().any(|(_, _, b)| b.is_some()) {
        "date,portfolio,benchmark\n"
    } else {
        "date,portfolio\n"
    });
    for (date, portfolio, benchmark) in &report.cumulative {
        match benchmark {
            Some(b) => cumulative.push_str(&format!("{date},{portfolio},{b}\n")),
            None => cumulative.push_str(&format!("{date},{portfolio}\n")),
        }
    }
    io::write_atomic(&paths.cumulative, cumulative.as_bytes())?;

    Ok(paths)
}

/// Flat key=value metric lines. Optional metrics are omitted when
/// undefined (no benchmark, or zero volatility).
fn render_metrics(report: &RunReport) -> String {
    let mut out = String::new();
    let m = &report.metrics;
    if let Some(sharpe) = m.sharpe {
        out.push_str(&format!("sharpe={sharpe}\n"));
    }
    if let Some(te) = m.tracking_error {
        out.push_str(&format!("tracking_error={te}\n"));
    }
    out.push_str(&format!("var={}\n", m.value_at_risk));
    out.push_str(&format!("cvar={}\n", m.cvar));
    out.push_str(&format!("volatility={}\n", m.volatility));
    out.push_str(&format!("mean_return={}\n", m.mean_return));
    out.push_str(&format!("alpha={}\n", m.alpha));
    out.push_str(&format!("risk_free={}\n", m.risk_free));
    out.push_str(&format!("final_loss={}\n", report.final_loss));
    out.push_str(&format!("non_monotonic={}\n", report.non_monotonic));
    for row in &report.compliance {
        out.push_str(&format!("compliance.{}.residual={}\n", row.label, row.residual));
        out.push_str(&format!("compliance.{}.satisfied={}\n", row.label, row.satisfied));
    }
    out.push_str(&format!("feasible={}\n", report.all_constraints_satisfied()));
    out
}

/// Parses a metrics file back into key/value pairs (used by tests and
/// downstream tooling).
pub fn parse_metrics(content: &str) -> Vec<(String, String)> {
    content
        .lines()
        .filter(|l| !l.is_empty())
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
