//! Loss composition and the gradient-descent training loop.
//!
//! A [`LossSpec`] lists weighted objective and constraint terms; the
//! composed loss is the multiplier-weighted sum with maximization
//! objectives entering negated. Training builds the loss graph once over
//! the panel, then rebinds the pre-weights each epoch, runs
//! forward/backward, and steps the optimizer. Everything is seeded and
//! sequential, so a (seed, config, data) triple fully determines the
//! trace.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::finance::{self, measures, FinanceError, GroupMaskSet, MaskGroup};
use crate::oracle::{self, OracleError};
use crate::optim::{Optimizer, OptimizerKind};
use crate::panel::ReturnsPanel;
use crate::projection::{self, ProjectionKind, WeightError, WeightVector};
use crate::tape::{Graph, NodeId, TapeError};

/// Feasibility tolerance on the UCITS single-asset cap.
pub const CAP_TOLERANCE: f64 = 1e-6;
/// Feasibility tolerance on the 5/40 aggregated holding sum.
pub const AGG_TOLERANCE: f64 = 1e-3;
/// Feasibility tolerance on the tracking-error limit.
pub const TE_TOLERANCE: f64 = 1e-5;
/// Feasibility tolerance on the minimum active weight.
pub const MIN_WEIGHT_TOLERANCE: f64 = 1e-6;
/// Feasibility tolerance on each group-mask absolute deviation.
pub const GROUP_DEV_TOLERANCE: f64 = 1e-3;

/// Default CVaR confidence level when the spec does not set one.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// An objective to optimize. Sharpe is a maximization and enters the
/// loss negated; everything else is minimized as written.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ObjectiveKind {
    MeanVariance {
        risk_aversion: f64,
    },
    Sharpe {
        #[cfg_attr(feature = "serde", serde(default))]
        risk_free: f64,
    },
    Cvar {
        alpha: f64,
    },
    Volatility,
}

impl ObjectiveKind {
    fn label(&self) -> &'static str {
        match self {
            ObjectiveKind::MeanVariance { .. } => "mean_variance",
            ObjectiveKind::Sharpe { .. } => "sharpe",
            ObjectiveKind::Cvar { .. } => "cvar",
            ObjectiveKind::Volatility => "volatility",
        }
    }
}

/// A penalty constraint appended to the loss.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ConstraintKind {
    #[cfg_attr(feature = "serde", serde(rename = "te"))]
    TrackingError {
        te_max: f64,
    },
    Ucits10,
    Ucits540,
    MinWeight {
        min_weight: f64,
    },
    CountRange {
        low: usize,
        high: usize,
    },
    GroupMask {
        groups: Vec<MaskGroup>,
    },
}

impl ConstraintKind {
    fn label(&self) -> &'static str {
        match self {
            ConstraintKind::TrackingError { .. } => "te",
            ConstraintKind::Ucits10 => "ucits10",
            ConstraintKind::Ucits540 => "ucits540",
            ConstraintKind::MinWeight { .. } => "min_weight",
            ConstraintKind::CountRange { .. } => "count_range",
            ConstraintKind::GroupMask { .. } => "group_mask",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectiveTerm {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub kind: ObjectiveKind,
    #[cfg_attr(feature = "serde", serde(rename = "lambda"))]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConstraintTerm {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub kind: ConstraintKind,
    #[cfg_attr(feature = "serde", serde(rename = "lambda"))]
    pub weight: f64,
}

/// The multi-objective loss: multiplier-weighted objective and
/// constraint terms.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossSpec {
    pub objectives: Vec<ObjectiveTerm>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub constraints: Vec<ConstraintTerm>,
}

impl LossSpec {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.objectives.is_empty() {
            return Err(EngineError::InvalidSpec("at least one objective term is required".into()));
        }
        for term in &self.objectives {
            if !(term.weight >= 0.0) || !term.weight.is_finite() {
                return Err(EngineError::InvalidSpec("objective multipliers must be >= 0".into()));
            }
            match &term.kind {
                ObjectiveKind::Cvar { alpha } => {
                    if !(*alpha > 0.0 && *alpha < 1.0) {
                        return Err(EngineError::InvalidSpec("alpha must lie in (0, 1)".into()));
                    }
                }
                ObjectiveKind::MeanVariance { risk_aversion } => {
                    if !risk_aversion.is_finite() {
                        return Err(EngineError::InvalidSpec("risk aversion must be finite".into()));
                    }
                }
                ObjectiveKind::Sharpe { risk_free } => {
                    if !risk_free.is_finite() {
                        return Err(EngineError::InvalidSpec("risk-free rate must be finite".into()));
                    }
                }
                ObjectiveKind::Volatility => {}
            }
        }
        for term in &self.constraints {
            if !(term.weight >= 0.0) || !term.weight.is_finite() {
                return Err(EngineError::InvalidSpec("constraint multipliers must be >= 0".into()));
            }
            match &term.kind {
                ConstraintKind::TrackingError { te_max } => {
                    if !(*te_max >= 0.0) {
                        return Err(EngineError::InvalidSpec("te_max must be >= 0".into()));
                    }
                }
                ConstraintKind::MinWeight { min_weight } => {
                    if !(*min_weight > 0.0 && *min_weight < 1.0) {
                        return Err(EngineError::InvalidSpec(
                            "min_weight must lie in (0, 1)".into(),
                        ));
                    }
                }
                ConstraintKind::CountRange { low, high } => {
                    if !(*low > 0 && low <= high) {
                        return Err(EngineError::InvalidSpec(
                            "count range needs 0 < low <= high".into(),
                        ));
                    }
                }
                ConstraintKind::GroupMask { groups } => {
                    if groups.is_empty() {
                        return Err(EngineError::InvalidSpec("group mask needs groups".into()));
                    }
                }
                ConstraintKind::Ucits10 | ConstraintKind::Ucits540 => {}
            }
        }
        Ok(())
    }

    /// CVaR confidence and risk-free rate used for metric reports: taken
    /// from the first matching objective, with defaults otherwise.
    pub fn report_params(&self) -> (f64, f64) {
        let mut alpha = DEFAULT_ALPHA;
        let mut risk_free = 0.0;
        for term in &self.objectives {
            match term.kind {
                ObjectiveKind::Cvar { alpha: a } => {
                    alpha = a;
                    break;
                }
                _ => {}
            }
        }
        for term in &self.objectives {
            if let ObjectiveKind::Sharpe { risk_free: rf } = term.kind {
                risk_free = rf;
                break;
            }
        }
        (alpha, risk_free)
    }

    /// Ordered labels of all weighted terms, disambiguated when a kind
    /// repeats.
    pub fn term_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = Vec::new();
        let push = |labels: &mut Vec<String>, base: &str| {
            let dupes = labels
                .iter()
                .filter(|l| l.as_str() == base || l.starts_with(&format!("{base}_")))
                .count();
            if dupes == 0 {
                labels.push(base.to_string());
            } else {
                labels.push(format!("{base}_{}", dupes + 1));
            }
        };
        for term in &self.objectives {
            push(&mut labels, term.kind.label());
        }
        for term in &self.constraints {
            push(&mut labels, term.kind.label());
        }
        labels
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub optimizer: OptimizerKind,
    #[cfg_attr(feature = "serde", serde(default))]
    pub projection: ProjectionKind,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(default = "default_init_scale"))]
    pub init_scale: f64,
}

#[cfg(feature = "serde")]
fn default_init_scale() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.learning_rate > 0.0) {
            return Err(EngineError::InvalidConfig("learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(EngineError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.init_scale >= 0.0) {
            return Err(EngineError::InvalidConfig("init scale must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineError {
    InvalidSpec(String),
    InvalidConfig(String),
    Finance(FinanceError),
    Tape(TapeError),
    Oracle(OracleError),
    Weights(WeightError),
    /// Training aborted on a non-finite loss; the breakdown carries each
    /// term's last cached value.
    NonFiniteLoss { epoch: usize, breakdown: Vec<(String, f64)> },
    /// A grid axis referenced a term label that is not in the spec.
    UnknownTerm(String),
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::InvalidSpec(msg) => write!(f, "invalid loss spec: {msg}"),
            EngineError::InvalidConfig(msg) => write!(f, "invalid train config: {msg}"),
            EngineError::Finance(e) => write!(f, "{e}"),
            EngineError::Tape(e) => write!(f, "{e}"),
            EngineError::Oracle(e) => write!(f, "{e}"),
            EngineError::Weights(e) => write!(f, "{e}"),
            EngineError::NonFiniteLoss { epoch, breakdown } => {
                write!(f, "non-finite loss at epoch {epoch}:")?;
                for (label, value) in breakdown {
                    write!(f, " {label}={value}")?;
                }
                Ok(())
            }
            EngineError::UnknownTerm(label) => write!(f, "no loss term labelled '{label}'"),
        }
    }
}

impl core::error::Error for EngineError {}

impl From<FinanceError> for EngineError {
    fn from(e: FinanceError) -> Self {
        EngineError::Finance(e)
    }
}

impl From<TapeError> for EngineError {
    fn from(e: TapeError) -> Self {
        EngineError::Tape(e)
    }
}

impl From<OracleError> for EngineError {
    fn from(e: OracleError) -> Self {
        EngineError::Oracle(e)
    }
}

impl From<WeightError> for EngineError {
    fn from(e: WeightError) -> Self {
        EngineError::Weights(e)
    }
}

/// The composed loss graph with handles to its moving parts.
pub struct LossGraph {
    pub graph: Graph,
    /// Pre-weight input node.
    pub pre_weights: NodeId,
    /// Projected weight node.
    pub weights: NodeId,
    /// Scalar total loss.
    pub total: NodeId,
    /// Weighted term nodes (multiplier times term), in label order.
    pub terms: Vec<(String, NodeId)>,
}

/// Builds the weighted loss graph over the panel: project pre-weights,
/// form the portfolio return series inside the graph, and sum the
/// weighted terms left to right (maximization objectives negated).
pub fn compose_loss(
    spec: &LossSpec,
    panel: &ReturnsPanel,
    projection_kind: ProjectionKind,
) -> Result<LossGraph, EngineError> {
    spec.validate()?;
    let n = panel.n_assets();
    let labels = spec.term_labels();
    let mut g = Graph::new();
    let z = g.input(n);
    let w = projection::project_node(&mut g, projection_kind, z);
    let r = finance::portfolio_returns(&mut g, panel.returns(), w);

    let mut terms: Vec<(String, NodeId)> = Vec::new();
    let mut label_iter = labels.into_iter();
    for term in &spec.objectives {
        let node = match &term.kind {
            ObjectiveKind::MeanVariance { risk_aversion } => {
                finance::mean_variance_objective(&mut g, r, *risk_aversion)
            }
            ObjectiveKind::Sharpe { risk_free } => {
                let s = finance::sharpe_ratio(&mut g, r, *risk_free);
                g.neg(s)
            }
            ObjectiveKind::Cvar { alpha } => finance::cvar(&mut g, r, *alpha),
            ObjectiveKind::Volatility => finance::volatility(&mut g, r),
        };
        let lam = g.scalar(term.weight);
        let weighted = g.mul(lam, node);
        terms.push((label_iter.next().expect("label per term"), weighted));
    }
    for term in &spec.constraints {
        let node = match &term.kind {
            ConstraintKind::TrackingError { te_max } => {
                let benchmark = panel.benchmark().ok_or_else(|| {
                    EngineError::InvalidSpec("tracking-error term needs a benchmark column".into())
                })?;
                finance::constraint_te(&mut g, r, benchmark, *te_max)?
            }
            ConstraintKind::Ucits10 => finance::constraint_ucits_10(&mut g, w),
            ConstraintKind::Ucits540 => finance::constraint_ucits_5_40(&mut g, w),
            ConstraintKind::MinWeight { min_weight } => {
                finance::constraint_min_weight(&mut g, w, *min_weight)
            }
            ConstraintKind::CountRange { low, high } => {
                finance::constraint_count_range(&mut g, w, *low, *high)
            }
            ConstraintKind::GroupMask { groups } => {
                let set = GroupMaskSet::from_groups(n, groups)?;
                finance::constraint_group_mask(&mut g, w, &set)?
            }
        };
        let lam = g.scalar(term.weight);
        let weighted = g.mul(lam, node);
        terms.push((label_iter.next().expect("label per term"), weighted));
    }

    let mut total = terms[0].1;
    for (_, node) in &terms[1..] {
        total = g.add(total, *node);
    }
    Ok(LossGraph { graph: g, pre_weights: z, weights: w, total, terms })
}

/// Eagerly evaluates the weighted loss and its terms at fixed weights.
/// Mirrors [`compose_loss`] exactly (same labels, same order, same
/// negation of maximization terms).
pub fn evaluate_spec(
    spec: &LossSpec,
    panel: &ReturnsPanel,
    w: &[f64],
) -> Result<SpecValue, EngineError> {
    spec.validate()?;
    let r = panel.portfolio_returns(w);
    let labels = spec.term_labels();
    let mut label_iter = labels.into_iter();
    let mut terms: Vec<(String, f64)> = Vec::new();
    let mut objective = 0.0;
    for term in &spec.objectives {
        let raw = match &term.kind {
            ObjectiveKind::MeanVariance { risk_aversion } => {
                measures::mean_variance(&r, *risk_aversion)
            }
            ObjectiveKind::Sharpe { risk_free } => -measures::sharpe_ratio(&r, *risk_free)?,
            ObjectiveKind::Cvar { alpha } => measures::cvar(&r, *alpha),
            ObjectiveKind::Volatility => measures::volatility(&r),
        };
        objective += raw;
        terms.push((label_iter.next().expect("label per term"), term.weight * raw));
    }
    for term in &spec.constraints {
        let raw = constraint_residual(&term.kind, panel, w, &r)?;
        terms.push((label_iter.next().expect("label per term"), term.weight * raw));
    }
    let mut total = 0.0;
    for (_, v) in &terms {
        total += v;
    }
    Ok(SpecValue { total, objective, terms })
}

/// Weighted loss decomposition at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecValue {
    /// Sum of all weighted terms.
    pub total: f64,
    /// Sum of the unweighted objective terms (loss orientation), the
    /// quantity grid-search rows are ranked by.
    pub objective: f64,
    /// Weighted value of each term, in label order.
    pub terms: Vec<(String, f64)>,
}

/// The exact penalty value of one constraint at fixed weights.
pub fn constraint_residual(
    kind: &ConstraintKind,
    panel: &ReturnsPanel,
    w: &[f64],
    returns: &[f64],
) -> Result<f64, EngineError> {
    Ok(match kind {
        ConstraintKind::TrackingError { te_max } => {
            let benchmark = panel.benchmark().ok_or_else(|| {
                EngineError::InvalidSpec("tracking-error term needs a benchmark column".into())
            })?;
            measures::constraint_te(returns, benchmark, *te_max)?
        }
        ConstraintKind::Ucits10 => measures::constraint_ucits_10(w),
        ConstraintKind::Ucits540 => measures::constraint_ucits_5_40(w),
        ConstraintKind::MinWeight { min_weight } => measures::constraint_min_weight(w, *min_weight),
        ConstraintKind::CountRange { low, high } => {
            measures::constraint_count_range(w, *low, *high)
        }
        ConstraintKind::GroupMask { groups } => {
            let set = GroupMaskSet::from_groups(w.len(), groups)?;
            measures::constraint_group_mask(w, &set)?
        }
    })
}

/// Whether one constraint holds at `w` within the engine's feasibility
/// tolerances.
pub fn constraint_satisfied(
    kind: &ConstraintKind,
    panel: &ReturnsPanel,
    w: &[f64],
    returns: &[f64],
) -> Result<bool, EngineError> {
    Ok(match kind {
        ConstraintKind::TrackingError { te_max } => {
            let benchmark = panel.benchmark().ok_or_else(|| {
                EngineError::InvalidSpec("tracking-error term needs a benchmark column".into())
            })?;
            measures::tracking_error(returns, benchmark)? <= te_max + TE_TOLERANCE
        }
        ConstraintKind::Ucits10 => {
            w.iter().all(|v| *v <= finance::UCITS_SINGLE_CAP + CAP_TOLERANCE)
        }
        ConstraintKind::Ucits540 => {
            measures::large_holding_sum(w) <= finance::UCITS_AGG_UPPER + AGG_TOLERANCE
        }
        ConstraintKind::MinWeight { min_weight } => {
            w.iter().all(|v| *v <= 0.0 || *v >= min_weight - MIN_WEIGHT_TOLERANCE)
        }
        ConstraintKind::CountRange { low, high } => {
            let k = measures::active_count(w);
            k >= *low && k <= *high
        }
        ConstraintKind::GroupMask { groups } => {
            let set = GroupMaskSet::from_groups(w.len(), groups)?;
            let sums = set.group_sums(w);
            set.max_weights()
                .iter()
                .zip(&sums)
                .all(|(target, sum)| (target - sum).abs() <= GROUP_DEV_TOLERANCE)
        }
    })
}

/// One constraint's compliance at the final weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceRow {
    pub label: String,
    pub residual: f64,
    pub satisfied: bool,
}

/// Compliance table over every constraint term in the spec.
pub fn compliance(
    spec: &LossSpec,
    panel: &ReturnsPanel,
    w: &[f64],
) -> Result<Vec<ComplianceRow>, EngineError> {
    let returns = panel.portfolio_returns(w);
    let labels = spec.term_labels();
    let mut rows = Vec::new();
    for (term, label) in spec.constraints.iter().zip(labels.into_iter().skip(spec.objectives.len()))
    {
        rows.push(ComplianceRow {
            label,
            residual: constraint_residual(&term.kind, panel, w, &returns)?,
            satisfied: constraint_satisfied(&term.kind, panel, w, &returns)?,
        });
    }
    Ok(rows)
}

/// Point-in-time metrics of a weight vector over a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// None when the portfolio volatility is zero.
    pub sharpe: Option<f64>,
    /// None when the panel has no benchmark column.
    pub tracking_error: Option<f64>,
    pub value_at_risk: f64,
    pub cvar: f64,
    pub volatility: f64,
    pub mean_return: f64,
    /// Confidence level the VaR/CVaR figures use.
    pub alpha: f64,
    /// Risk-free rate the Sharpe figure uses.
    pub risk_free: f64,
}

/// Evaluates the standard metric set at fixed weights.
pub fn metric_report(
    panel: &ReturnsPanel,
    w: &[f64],
    alpha: f64,
    risk_free: f64,
) -> MetricReport {
    let r = panel.portfolio_returns(w);
    let sharpe = measures::sharpe_ratio(&r, risk_free).ok();
    let tracking_error = panel.benchmark().map(|b| {
        measures::tracking_error(&r, b).expect("benchmark length is validated at construction")
    });
    MetricReport {
        sharpe,
        tracking_error,
        value_at_risk: measures::value_at_risk(&r, alpha),
        cvar: measures::cvar(&r, alpha),
        volatility: measures::volatility(&r),
        mean_return: measures::mean(&r),
        alpha,
        risk_free,
    }
}

/// Loss decomposition at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub total: f64,
    /// Weighted term values in label order.
    pub terms: Vec<f64>,
}

/// Full record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub term_labels: Vec<String>,
    /// One record per epoch, evaluated before that epoch's update.
    pub epochs: Vec<EpochRecord>,
    pub final_pre_weights: Vec<f64>,
    pub final_weights: WeightVector,
    pub report: MetricReport,
    /// Set when the final loss exceeds the initial loss. Transient
    /// peaks are normal for penalty terms; this flag only marks runs
    /// that ended worse than they started.
    pub non_monotonic: bool,
}

impl TrainTrace {
    pub fn initial_loss(&self) -> f64 {
        self.epochs.first().map(|e| e.total).unwrap_or(f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map(|e| e.total).unwrap_or(f64::NAN)
    }
}

/// Runs gradient descent on the composed loss. The pre-weights start at
/// `uniform(-0.01, 0.01) * init_scale`, seeded; each epoch evaluates the
/// loss, records the decomposition, and steps the optimizer. Aborts with
/// the epoch index and term breakdown if the loss goes non-finite.
pub fn train(
    spec: &LossSpec,
    panel: &ReturnsPanel,
    cfg: &TrainConfig,
) -> Result<TrainTrace, EngineError> {
    cfg.validate()?;
    if panel.periods() < 2 {
        return Err(EngineError::Finance(FinanceError::TooFewPeriods { len: panel.periods() }));
    }
    if panel.n_assets() < 2 {
        return Err(EngineError::InvalidSpec("need at least 2 assets".into()));
    }
    let mut lg = compose_loss(spec, panel, cfg.projection)?;
    let n = panel.n_assets();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            (2.0 * u - 1.0) * 0.01 * cfg.init_scale
        })
        .collect();

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, n);
    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        lg.graph.bind(lg.pre_weights, &z);
        match lg.graph.forward(lg.total) {
            Ok(_) => {}
            Err(TapeError::NonFinite { .. }) => {
                let breakdown = lg
                    .terms
                    .iter()
                    .map(|(label, node)| (label.clone(), lg.graph.value(*node).first().copied().unwrap_or(f64::NAN)))
                    .collect();
                return Err(EngineError::NonFiniteLoss { epoch, breakdown });
            }
            Err(e) => return Err(e.into()),
        }
        let total = lg.graph.scalar_value(lg.total);
        let terms: Vec<f64> =
            lg.terms.iter().map(|(_, node)| lg.graph.scalar_value(*node)).collect();
        // The projected weights must stay on the simplex at every epoch.
        WeightVector::new(lg.graph.value(lg.weights).to_vec())?;
        epochs.push(EpochRecord { total, terms });

        lg.graph.backward(lg.total)?;
        let grads = lg.graph.adjoint(lg.pre_weights).to_vec();
        optimizer.update(&mut z, &grads);
    }

    let final_w = match cfg.projection {
        ProjectionKind::Softmax => projection::softmax(&z),
        ProjectionKind::Sparsemax => projection::sparsemax(&z),
    };
    let final_weights = WeightVector::new(final_w)?;
    let (alpha, risk_free) = spec.report_params();
    let report = metric_report(panel, &final_weights, alpha, risk_free);
    let non_monotonic = match (epochs.first(), epochs.last()) {
        (Some(first), Some(last)) => last.total > first.total,
        _ => false,
    };
    Ok(TrainTrace {
        term_labels: spec.term_labels(),
        epochs,
        final_pre_weights: z,
        final_weights,
        report,
        non_monotonic,
    })
}

// ── Grid search ──

/// One sweep axis: the labelled term whose multiplier is varied, and the
/// candidate values.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridAxis {
    /// Term label as produced by [`LossSpec::term_labels`], e.g.
    /// "ucits10".
    pub term: String,
    pub values: Vec<f64>,
}

/// Cartesian sweep specification.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

/// Result of one sweep cell.
#[derive(Debug, Clone)]
pub struct GridRow {
    /// Multiplier of each axis term, in axis order.
    pub lambdas: Vec<f64>,
    pub outcome: Result<GridOutcome, EngineError>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    /// Unweighted objective value at the final weights (loss
    /// orientation: lower is better).
    pub objective: f64,
    pub compliance: Vec<ComplianceRow>,
    pub feasible: bool,
    pub report: MetricReport,
    pub final_weights: WeightVector,
}

enum TermSlot {
    Objective(usize),
    Constraint(usize),
}

fn resolve_term(spec: &LossSpec, label: &str) -> Result<TermSlot, EngineError> {
    let labels = spec.term_labels();
    let position = labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| EngineError::UnknownTerm(label.to_string()))?;
    if position < spec.objectives.len() {
        Ok(TermSlot::Objective(position))
    } else {
        Ok(TermSlot::Constraint(position - spec.objectives.len()))
    }
}

/// Runs one full training per multiplier combination, in row-major order
/// (last axis fastest). Per-cell failures are recorded in the row and do
/// not abort the sweep.
pub fn grid_search(
    spec: &LossSpec,
    grid: &GridSpec,
    panel: &ReturnsPanel,
    cfg: &TrainConfig,
) -> Result<Vec<GridRow>, EngineError> {
    if grid.axes.is_empty() || grid.axes.iter().any(|a| a.values.is_empty()) {
        return Err(EngineError::InvalidConfig("grid axes must be non-empty".into()));
    }
    spec.validate()?;
    let slots: Vec<TermSlot> = grid
        .axes
        .iter()
        .map(|a| resolve_term(spec, &a.term))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    let mut indices = alloc::vec![0usize; grid.axes.len()];
    loop {
        let lambdas: Vec<f64> =
            indices.iter().zip(&grid.axes).map(|(i, a)| a.values[*i]).collect();
        let mut cell_spec = spec.clone();
        for (slot, lambda) in slots.iter().zip(&lambdas) {
            match slot {
                TermSlot::Objective(i) => cell_spec.objectives[*i].weight = *lambda,
                TermSlot::Constraint(i) => cell_spec.constraints[*i].weight = *lambda,
            }
        }
        let outcome = run_cell(&cell_spec, panel, cfg);
        rows.push(GridRow { lambdas, outcome });

        // Odometer advance, last axis fastest.
        let mut axis = grid.axes.len();
        loop {
            if axis == 0 {
                return Ok(rows);
            }
            axis -= 1;
            indices[axis] += 1;
            if indices[axis] < grid.axes[axis].values.len() {
                break;
            }
            indices[axis] = 0;
        }
    }
}

fn run_cell(
    spec: &LossSpec,
    panel: &ReturnsPanel,
    cfg: &TrainConfig,
) -> Result<GridOutcome, EngineError> {
    let trace = train(spec, panel, cfg)?;
    let w = trace.final_weights.as_slice();
    let value = evaluate_spec(spec, panel, w)?;
    let rows = compliance(spec, panel, w)?;
    let feasible = rows.iter().all(|r| r.satisfied);
    Ok(GridOutcome {
        objective: value.objective,
        compliance: rows,
        feasible,
        report: trace.report.clone(),
        final_weights: trace.final_weights,
    })
}

// ── Replication study ──

/// Controls the random sub-problem sampling of [`replication_study`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReplicationConfig {
    /// Number of random simulations.
    pub runs: usize,
    /// Smallest sampled asset universe.
    pub min_assets: usize,
    /// Largest sampled asset universe (clamped to the panel width; keep
    /// small, the oracle enumerates a grid over it).
    pub max_assets: usize,
    /// Shortest sampled time window.
    pub min_window: usize,
    /// Simplex grid resolution for the exact baseline.
    pub oracle_step: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ReplicationRow {
    pub run: usize,
    pub asset_indices: Vec<usize>,
    /// (start, length) of the sampled period window.
    pub window: (usize, usize),
    /// Mean squared difference between trained and oracle weights.
    pub weight_mse: f64,
    /// Trained objective minus oracle objective (loss orientation;
    /// negative means training beat the grid resolution).
    pub objective_gap: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicationSummary {
    pub rows: Vec<ReplicationRow>,
    pub mean_weight_mse: f64,
    pub mean_objective_gap: f64,
}

/// For each run, samples a random asset subset and time window, trains
/// the spec on it, and compares the result against the brute-force
/// simplex grid on the same sub-problem. Fully seeded.
pub fn replication_study(
    panel: &ReturnsPanel,
    spec: &LossSpec,
    cfg: &TrainConfig,
    rep: &ReplicationConfig,
) -> Result<ReplicationSummary, EngineError> {
    if rep.runs == 0 {
        return Err(EngineError::InvalidConfig("replication needs at least one run".into()));
    }
    if rep.min_assets < 2 {
        return Err(EngineError::InvalidConfig("min_assets must be >= 2".into()));
    }
    let max_assets = rep.max_assets.min(panel.n_assets());
    if rep.min_assets > max_assets {
        return Err(EngineError::InvalidConfig("min_assets above the usable maximum".into()));
    }
    let min_window = rep.min_window.max(2).min(panel.periods());

    let mut rows = Vec::with_capacity(rep.runs);
    for run in 0..rep.runs {
        let mut rng = ChaCha8Rng::seed_from_u64(rep.seed.wrapping_add(run as u64));
        let n_assets = rng.random_range(rep.min_assets..=max_assets);
        // Partial Fisher-Yates over the asset indices.
        let mut pool: Vec<usize> = (0..panel.n_assets()).collect();
        for i in 0..n_assets {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut asset_indices = pool[..n_assets].to_vec();
        asset_indices.sort_unstable();
        let window_len = rng.random_range(min_window..=panel.periods());
        let start = rng.random_range(0..=panel.periods() - window_len);

        let sub = panel.slice(&asset_indices, start, window_len);
        let trace = train(spec, &sub, cfg)?;
        let trained = trace.final_weights.as_slice().to_vec();

        let objective = |w: &[f64]| -> f64 {
            match evaluate_spec(spec, &sub, w) {
                Ok(v) => v.total,
                Err(_) => f64::NAN,
            }
        };
        let best = oracle::simplex_grid_search(objective, n_assets, rep.oracle_step)?;
        let weight_mse = trained
            .iter()
            .zip(&best.weights)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n_assets as f64;
        let trained_value = evaluate_spec(spec, &sub, &trained)?.total;
        rows.push(ReplicationRow {
            run,
            asset_indices,
            window: (start, window_len),
            weight_mse,
            objective_gap: trained_value - best.value,
        });
    }
    let mean_weight_mse = rows.iter().map(|r| r.weight_mse).sum::<f64>() / rows.len() as f64;
    let mean_objective_gap =
        rows.iter().map(|r| r.objective_gap).sum::<f64>() / rows.len() as f64;
    Ok(ReplicationSummary { rows, mean_weight_mse, mean_objective_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use alloc::vec;

    fn two_asset_panel() -> ReturnsPanel {
        // Asset 1 always +1%, asset 2 always -1%.
        let t = 12;
        let mut m = Matrix::zeros(t, 2);
        for row in 0..t {
            m.set(row, 0, 0.01);
            m.set(row, 1, -0.01);
        }
        let dates = (0..t).map(|i| format!("2020-01-{:02}", i + 1)).collect();
        ReturnsPanel::new(vec!["UP".into(), "DOWN".into()], dates, m, None).unwrap()
    }

    fn cvar_spec() -> LossSpec {
        LossSpec {
            objectives: vec![ObjectiveTerm {
                kind: ObjectiveKind::Cvar { alpha: 0.25 },
                weight: 1.0,
            }],
            constraints: vec![],
        }
    }

    fn base_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 300,
            optimizer: OptimizerKind::Adam,
            projection: ProjectionKind::Sparsemax,
            seed: 3,
            init_scale: 1.0,
        }
    }

    #[test]
    fn single_term_compose_matches_the_bare_measure() {
        let panel = two_asset_panel();
        let spec = cvar_spec();
        let w = [0.6, 0.4];
        let value = evaluate_spec(&spec, &panel, &w).unwrap();
        let r = panel.portfolio_returns(&w);
        assert!((value.total - measures::cvar(&r, 0.25)).abs() < 1e-15);

        let mut lg = compose_loss(&spec, &panel, ProjectionKind::Sparsemax).unwrap();
        // Pre-weights that sparsemax to exactly [0.6, 0.4].
        lg.graph.bind(lg.pre_weights, &[0.6, 0.4]);
        lg.graph.forward(lg.total).unwrap();
        assert!((lg.graph.scalar_value(lg.total) - value.total).abs() < 1e-14);
    }

    #[test]
    fn sharpe_enters_negated_alongside_cvar() {
        let panel = two_asset_panel();
        let spec = LossSpec {
            objectives: vec![
                ObjectiveTerm { kind: ObjectiveKind::Sharpe { risk_free: 0.0 }, weight: 1.0 },
                ObjectiveTerm { kind: ObjectiveKind::Cvar { alpha: 0.25 }, weight: 1.0 },
            ],
            constraints: vec![],
        };
        let w = [0.7, 0.3];
        let r = panel.portfolio_returns(&w);
        let expected =
            -measures::sharpe_ratio(&r, 0.0).unwrap() + measures::cvar(&r, 0.25);
        let value = evaluate_spec(&spec, &panel, &w).unwrap();
        assert!((value.total - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_weight_terms_change_nothing() {
        let panel = two_asset_panel();
        let mut spec = cvar_spec();
        spec.constraints.push(ConstraintTerm { kind: ConstraintKind::Ucits10, weight: 0.0 });
        spec.constraints
            .push(ConstraintTerm { kind: ConstraintKind::MinWeight { min_weight: 0.3 }, weight: 0.0 });
        let w = [0.5, 0.5];
        let with = evaluate_spec(&spec, &panel, &w).unwrap();
        let without = evaluate_spec(&cvar_spec(), &panel, &w).unwrap();
        assert_eq!(with.total, without.total);
    }

    #[test]
    fn scaling_all_multipliers_scales_the_loss() {
        let panel = two_asset_panel();
        let mut spec = cvar_spec();
        spec.constraints.push(ConstraintTerm {
            kind: ConstraintKind::MinWeight { min_weight: 0.45 },
            weight: 2.0,
        });
        let w = [0.6, 0.4];
        let base = evaluate_spec(&spec, &panel, &w).unwrap();
        let mut scaled = spec.clone();
        for t in &mut scaled.objectives {
            t.weight *= 3.0;
        }
        for t in &mut scaled.constraints {
            t.weight *= 3.0;
        }
        let tripled = evaluate_spec(&scaled, &panel, &w).unwrap();
        assert!((tripled.total - 3.0 * base.total).abs() < 1e-12);
    }

    #[test]
    fn mean_maximization_goes_all_in_on_the_winning_asset() {
        // Mean-variance with zero risk aversion maximizes the mean; the
        // grid oracle agrees the optimum is the +1% vertex.
        let panel = two_asset_panel();
        let spec = LossSpec {
            objectives: vec![ObjectiveTerm {
                kind: ObjectiveKind::MeanVariance { risk_aversion: 0.0 },
                weight: 1.0,
            }],
            constraints: vec![],
        };
        let trace = train(&spec, &panel, &base_cfg()).unwrap();
        assert_eq!(trace.final_weights.as_slice(), &[1.0, 0.0]);

        let best = oracle::simplex_grid_search(
            |w| evaluate_spec(&spec, &panel, w).map(|v| v.total).unwrap_or(f64::NAN),
            2,
            0.01,
        )
        .unwrap();
        assert_eq!(best.weights, vec![1.0, 0.0]);
    }

    #[test]
    fn identical_assets_stay_uniform_from_a_uniform_start() {
        let t = 30;
        let n = 6;
        let mut m = Matrix::zeros(t, n);
        let mut state = 77u64;
        for row in 0..t {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let r = ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.04;
            for c in 0..n {
                m.set(row, c, r);
            }
        }
        let dates = (0..t).map(|i| format!("d{i}")).collect();
        let names = (0..n).map(|i| format!("A{i}")).collect();
        let panel = ReturnsPanel::new(names, dates, m, None).unwrap();
        let mut cfg = base_cfg();
        cfg.init_scale = 0.0;
        cfg.epochs = 50;
        let trace = train(&cvar_spec(), &panel, &cfg).unwrap();
        for w in trace.final_weights.iter() {
            assert!((w - 1.0 / n as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_trace_bitwise() {
        let panel = two_asset_panel();
        let spec = cvar_spec();
        let cfg = base_cfg();
        let a = train(&spec, &panel, &cfg).unwrap();
        let b = train(&spec, &panel, &cfg).unwrap();
        assert_eq!(a, b);
        for (ea, eb) in a.epochs.iter().zip(&b.epochs) {
            assert_eq!(ea.total.to_bits(), eb.total.to_bits());
        }
    }

    #[test]
    fn trace_totals_decompose_into_terms() {
        let panel = two_asset_panel();
        let mut spec = cvar_spec();
        spec.constraints
            .push(ConstraintTerm { kind: ConstraintKind::Ucits10, weight: 0.5 });
        spec.constraints
            .push(ConstraintTerm { kind: ConstraintKind::MinWeight { min_weight: 0.02 }, weight: 2.0 });
        let mut cfg = base_cfg();
        cfg.epochs = 40;
        let trace = train(&spec, &panel, &cfg).unwrap();
        assert_eq!(trace.epochs.len(), 40);
        for e in &trace.epochs {
            let sum: f64 = e.terms.iter().sum();
            assert!((e.total - sum).abs() <= 1e-12);
        }
    }

    #[test]
    fn grid_single_cell_equals_plain_train() {
        let panel = two_asset_panel();
        let mut spec = cvar_spec();
        spec.constraints.push(ConstraintTerm { kind: ConstraintKind::Ucits10, weight: 1.0 });
        let cfg = base_cfg();
        let grid = GridSpec {
            axes: vec![GridAxis { term: "ucits10".into(), values: vec![1.0] }],
        };
        let rows = grid_search(&spec, &grid, &panel, &cfg).unwrap();
        assert_eq!(rows.len(), 1);
        let outcome = rows[0].outcome.as_ref().unwrap();
        let trace = train(&spec, &panel, &cfg).unwrap();
        assert_eq!(outcome.final_weights, trace.final_weights);
    }

    #[test]
    fn six_by_six_grid_emits_36_rows_in_row_major_order() {
        let panel = two_asset_panel();
        let mut spec = cvar_spec();
        spec.constraints.push(ConstraintTerm { kind: ConstraintKind::Ucits10, weight: 1.0 });
        spec.constraints.push(ConstraintTerm { kind: ConstraintKind::Ucits540, weight: 1.0 });
        let mut cfg = base_cfg();
        cfg.epochs = 5;
        let values = vec![0.0, 0.001, 0.01, 0.1, 1.0, 10.0];
        let grid = GridSpec {
            axes: vec![
                GridAxis { term: "ucits10".into(), values: values.clone() },
                GridAxis { term: "ucits540".into(), values: values.clone() },
            ],
        };
        let rows = grid_search(&spec, &grid, &panel, &cfg).unwrap();
        assert_eq!(rows.len(), 36);
        // Row-major: the second axis varies fastest.
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.lambdas[0], values[i / 6]);
            assert_eq!(row.lambdas[1], values[i % 6]);
        }
    }

    #[test]
    fn unknown_grid_term_is_rejected() {
        let panel = two_asset_panel();
        let spec = cvar_spec();
        let grid = GridSpec {
            axes: vec![GridAxis { term: "nope".into(), values: vec![1.0] }],
        };
        assert!(matches!(
            grid_search(&spec, &grid, &panel, &base_cfg()),
            Err(EngineError::UnknownTerm(_))
        ));
    }

    #[test]
    fn replication_on_a_deterministic_pair_is_tight() {
        let panel = two_asset_panel();
        let spec = LossSpec {
            objectives: vec![ObjectiveTerm {
                kind: ObjectiveKind::MeanVariance { risk_aversion: 0.0 },
                weight: 1.0,
            }],
            constraints: vec![],
        };
        let rep = ReplicationConfig {
            runs: 1,
            min_assets: 2,
            max_assets: 2,
            min_window: 6,
            oracle_step: 0.01,
            seed: 11,
        };
        let summary = replication_study(&panel, &spec, &base_cfg(), &rep).unwrap();
        assert!(summary.mean_weight_mse <= 1e-4, "mse {}", summary.mean_weight_mse);
    }

    #[test]
    fn non_finite_loss_aborts_with_breakdown() {
        // Sharpe over a panel whose assets all have identical constant
        // returns: zero volatility from the uniform start.
        let t = 5;
        let mut m = Matrix::zeros(t, 2);
        for row in 0..t {
            m.set(row, 0, 0.01);
            m.set(row, 1, 0.01);
        }
        let dates = (0..t).map(|i| format!("d{i}")).collect();
        let panel =
            ReturnsPanel::new(vec!["A".into(), "B".into()], dates, m, None).unwrap();
        let spec = LossSpec {
            objectives: vec![ObjectiveTerm {
                kind: ObjectiveKind::Sharpe { risk_free: 0.0 },
                weight: 1.0,
            }],
            constraints: vec![],
        };
        let err = train(&spec, &panel, &base_cfg()).unwrap_err();
        match err {
            EngineError::NonFiniteLoss { epoch, breakdown } => {
                assert_eq!(epoch, 0);
                assert_eq!(breakdown.len(), 1);
                assert_eq!(breakdown[0].0, "sharpe");
            }
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_bad_specs_and_configs() {
        let empty = LossSpec { objectives: vec![], constraints: vec![] };
        assert!(matches!(empty.validate(), Err(EngineError::InvalidSpec(_))));
        let bad_alpha = LossSpec {
            objectives: vec![ObjectiveTerm { kind: ObjectiveKind::Cvar { alpha: 1.5 }, weight: 1.0 }],
            constraints: vec![],
        };
        assert!(bad_alpha.validate().is_err());
        let mut cfg = base_cfg();
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        cfg = base_cfg();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn duplicate_term_kinds_get_distinct_labels() {
        let spec = LossSpec {
            objectives: vec![
                ObjectiveTerm { kind: ObjectiveKind::Cvar { alpha: 0.05 }, weight: 1.0 },
                ObjectiveTerm { kind: ObjectiveKind::Cvar { alpha: 0.10 }, weight: 1.0 },
            ],
            constraints: vec![],
        };
        assert_eq!(spec.term_labels(), vec!["cvar".to_string(), "cvar_2".to_string()]);
    }
}
