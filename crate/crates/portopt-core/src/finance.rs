//! Differentiable portfolio objectives and penalty constraints.
//!
//! Every operation exists twice: as a graph builder over the tape (used
//! by the training engine, so gradients flow back to the pre-weights)
//! and as an eager function over plain slices in [`measures`] (used for
//! reports, feasibility checks, and the brute-force oracle). Tests pin
//! the two routes together.
//!
//! All statistics are population-normalized (divide by the number of
//! periods, not periods minus one). Portfolio returns are
//! `R_t = sum_i w_i r_{i,t}` over the panel's return matrix.

use alloc::rc::Rc;
use alloc::vec::Vec;
use core::fmt;

use crate::matrix::Matrix;
use crate::tape::{Graph, NodeId};

/// UCITS single-asset cap: no asset may exceed 10% of the portfolio.
pub const UCITS_SINGLE_CAP: f64 = 0.10;
/// UCITS aggregation lower limit: holdings above 5% are "large".
pub const UCITS_AGG_LOWER: f64 = 0.05;
/// UCITS aggregation upper limit: large holdings may sum to at most 40%.
pub const UCITS_AGG_UPPER: f64 = 0.40;

#[derive(Debug, Clone, PartialEq)]
pub enum FinanceError {
    /// Portfolio and benchmark series differ in length.
    LengthMismatch { left: usize, right: usize },
    /// Fewer than two return periods.
    TooFewPeriods { len: usize },
    /// Zero return volatility makes the Sharpe ratio undefined.
    DegenerateVolatility,
    /// Group mask shape or budget problems.
    BadGroupMask(&'static str),
}

impl fmt::Display for FinanceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FinanceError::LengthMismatch { left, right } => {
                write!(f, "series length mismatch: {left} vs {right}")
            }
            FinanceError::TooFewPeriods { len } => {
                write!(f, "need at least 2 return periods, got {len}")
            }
            FinanceError::DegenerateVolatility => write!(f, "degenerate portfolio volatility"),
            FinanceError::BadGroupMask(msg) => write!(f, "invalid group mask: {msg}"),
        }
    }
}

impl core::error::Error for FinanceError {}

/// One asset group with a target aggregate weight.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaskGroup {
    /// Asset indices belonging to the group.
    pub members: Vec<usize>,
    /// Target total weight for the group.
    pub max_weight: f64,
}

/// Binary asset-to-group membership matrix with per-group weight
/// budgets. Budgets must sum to at most 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMaskSet {
    /// n x m indicator matrix: entry (i, j) is 1 if asset i is in group j.
    matrix: Matrix,
    max_weights: Vec<f64>,
}

impl GroupMaskSet {
    pub fn from_groups(assets: usize, groups: &[MaskGroup]) -> Result<Self, FinanceError> {
        if groups.is_empty() {
            return Err(FinanceError::BadGroupMask("no groups"));
        }
        let mut matrix = Matrix::zeros(assets, groups.len());
        let mut max_weights = Vec::with_capacity(groups.len());
        let mut budget = 0.0;
        for (j, group) in groups.iter().enumerate() {
            if !(group.max_weight >= 0.0) {
                return Err(FinanceError::BadGroupMask("negative group budget"));
            }
            budget += group.max_weight;
            for &i in &group.members {
                if i >= assets {
                    return Err(FinanceError::BadGroupMask("member index out of range"));
                }
                if matrix.get(i, j) != 0.0 {
                    return Err(FinanceError::BadGroupMask("duplicate member in group"));
                }
                matrix.set(i, j, 1.0);
            }
            max_weights.push(group.max_weight);
        }
        if budget > 1.0 + 1e-9 {
            return Err(FinanceError::BadGroupMask("group budgets sum above 1"));
        }
        Ok(GroupMaskSet { matrix, max_weights })
    }

    pub fn assets(&self) -> usize {
        self.matrix.rows()
    }

    pub fn groups(&self) -> usize {
        self.max_weights.len()
    }

    pub fn max_weights(&self) -> &[f64] {
        &self.max_weights
    }

    /// Aggregate weight of each group under `w`.
    pub fn group_sums(&self, w: &[f64]) -> Vec<f64> {
        self.matrix.matvec_transpose(w)
    }

    /// Total weight on assets outside every group.
    pub fn off_mask_weight(&self, w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, wi) in w.iter().enumerate() {
            let inside = (0..self.groups()).any(|j| self.matrix.get(i, j) != 0.0);
            if !inside {
                acc += wi;
            }
        }
        acc
    }

    /// m x n transpose of the membership matrix, for graph matvecs.
    fn transposed(&self) -> Matrix {
        let mut t = Matrix::zeros(self.groups(), self.assets());
        for i in 0..self.assets() {
            for j in 0..self.groups() {
                t.set(j, i, self.matrix.get(i, j));
            }
        }
        t
    }
}

// ── Graph builders ──

/// Portfolio return series `R = returns * w` as a graph node.
pub fn portfolio_returns(g: &mut Graph, returns: Rc<Matrix>, w: NodeId) -> NodeId {
    g.matvec(returns, w)
}

/// Markowitz loss `-(mean(R) - lambda * var(R))` with population variance.
pub fn mean_variance_objective(g: &mut Graph, r: NodeId, risk_aversion: f64) -> NodeId {
    let mean = g.mean(r);
    let dev = g.sub(r, mean);
    let sq = g.mul(dev, dev);
    let var = g.mean(sq);
    let lam = g.scalar(risk_aversion);
    let penalty = g.mul(lam, var);
    let objective = g.sub(mean, penalty);
    g.neg(objective)
}

/// `(mean(R) - r_f) / std(R)`. Evaluation fails on zero volatility.
pub fn sharpe_ratio(g: &mut Graph, r: NodeId, risk_free: f64) -> NodeId {
    let mean = g.mean(r);
    let rf = g.scalar(risk_free);
    let excess = g.sub(mean, rf);
    let sd = g.std(r);
    g.div(excess, sd)
}

/// `-percentile(R, alpha * 100)` with linear interpolation.
pub fn value_at_risk(g: &mut Graph, r: NodeId, alpha: f64) -> NodeId {
    let p = g.percentile(r, alpha * 100.0);
    g.neg(p)
}

/// `VaR + mean(relu(-R - VaR)) / alpha`.
pub fn cvar(g: &mut Graph, r: NodeId, alpha: f64) -> NodeId {
    let var = value_at_risk(g, r, alpha);
    let losses = g.neg(r);
    let excess = g.sub(losses, var);
    let shortfall = g.relu(excess);
    let mean_shortfall = g.mean(shortfall);
    let a = g.scalar(alpha);
    let scaled = g.div(mean_shortfall, a);
    g.add(var, scaled)
}

/// Population standard deviation of `R - I`.
pub fn tracking_error(g: &mut Graph, r: NodeId, benchmark: &[f64]) -> Result<NodeId, FinanceError> {
    let rlen = g.node_len(r);
    if rlen != benchmark.len() {
        return Err(FinanceError::LengthMismatch { left: rlen, right: benchmark.len() });
    }
    let i = g.constant(benchmark);
    let diff = g.sub(r, i);
    Ok(g.std(diff))
}

/// `relu(TE(R, I) - te_max)`.
pub fn constraint_te(
    g: &mut Graph,
    r: NodeId,
    benchmark: &[f64],
    te_max: f64,
) -> Result<NodeId, FinanceError> {
    let te = tracking_error(g, r, benchmark)?;
    let cap = g.scalar(te_max);
    let excess = g.sub(te, cap);
    Ok(g.relu(excess))
}

/// `sum(relu(w - 0.1))`: total weight above the single-asset cap.
pub fn constraint_ucits_10(g: &mut Graph, w: NodeId) -> NodeId {
    let cap = g.scalar(UCITS_SINGLE_CAP);
    let excess = g.sub(w, cap);
    let clipped = g.relu(excess);
    g.sum(clipped)
}

/// `relu(sum(w masked above 5%) - 0.4)`: excess of the large-holding
/// sum over the aggregation limit.
pub fn constraint_ucits_5_40(g: &mut Graph, w: NodeId) -> NodeId {
    let mask = g.mask_above(w, UCITS_AGG_LOWER);
    let kept = g.mul(w, mask);
    let total = g.sum(kept);
    let upper = g.scalar(UCITS_AGG_UPPER);
    let excess = g.sub(total, upper);
    g.relu(excess)
}

/// `sum(w masked below m)`: total weight parked in the forbidden band
/// `(0, m)`. Zero-weight assets contribute nothing.
pub fn constraint_min_weight(g: &mut Graph, w: NodeId, min_weight: f64) -> NodeId {
    let mask = g.mask_below(w, min_weight);
    let kept = g.mul(w, mask);
    g.sum(kept)
}

/// `relu((low - k)(high - k))` with `k` the number of strictly positive
/// weights; positive exactly when `k` falls outside `[low, high]`.
pub fn constraint_count_range(g: &mut Graph, w: NodeId, low: usize, high: usize) -> NodeId {
    let mask = g.mask_above(w, 0.0);
    let count = g.sum(mask);
    let lo = g.scalar(low as f64);
    let hi = g.scalar(high as f64);
    let below = g.sub(lo, count);
    let above = g.sub(hi, count);
    let product = g.mul(below, above);
    g.relu(product)
}

/// `sum_j |max_j - sum_i w_i M_ij|`: absolute deviation of each group's
/// aggregate weight from its target.
pub fn constraint_group_mask(
    g: &mut Graph,
    w: NodeId,
    set: &GroupMaskSet,
) -> Result<NodeId, FinanceError> {
    if set.assets() != g.node_len(w) {
        return Err(FinanceError::BadGroupMask("mask rows do not match asset count"));
    }
    let transposed = Rc::new(set.transposed());
    let sums = g.matvec(transposed, w);
    let targets = g.constant(set.max_weights());
    let dev = g.sub(targets, sums);
    let abs = g.abs(dev);
    Ok(g.sum(abs))
}

/// Population standard deviation of the return series.
pub fn volatility(g: &mut Graph, r: NodeId) -> NodeId {
    g.std(r)
}

/// Eager (non-graph) counterparts of the graph builders, over plain
/// slices. The percentile and standard-deviation kernels are shared with
/// the tape so both routes use identical conventions.
pub mod measures {
    use super::*;
    use crate::projection::{mask_above, mask_below};
    use crate::tape::{percentile_with_brackets, population_std};
    use num_traits::Float;

    pub fn mean(r: &[f64]) -> f64 {
        let mut acc = 0.0;
        for v in r {
            acc += v;
        }
        acc / r.len() as f64
    }

    pub fn volatility(r: &[f64]) -> f64 {
        population_std(r)
    }

    pub fn mean_variance(r: &[f64], risk_aversion: f64) -> f64 {
        let m = mean(r);
        let sd = population_std(r);
        -(m - risk_aversion * sd * sd)
    }

    pub fn sharpe_ratio(r: &[f64], risk_free: f64) -> Result<f64, FinanceError> {
        let sd = population_std(r);
        if sd == 0.0 {
            return Err(FinanceError::DegenerateVolatility);
        }
        Ok((mean(r) - risk_free) / sd)
    }

    pub fn value_at_risk(r: &[f64], alpha: f64) -> f64 {
        let (p, _) = percentile_with_brackets(r, alpha * 100.0);
        -p
    }

    pub fn cvar(r: &[f64], alpha: f64) -> f64 {
        let var = value_at_risk(r, alpha);
        let mut acc = 0.0;
        for v in r {
            acc += Float::max(-v - var, 0.0);
        }
        var + acc / r.len() as f64 / alpha
    }

    pub fn tracking_error(r: &[f64], benchmark: &[f64]) -> Result<f64, FinanceError> {
        if r.len() != benchmark.len() {
            return Err(FinanceError::LengthMismatch { left: r.len(), right: benchmark.len() });
        }
        let diff: Vec<f64> = r.iter().zip(benchmark).map(|(a, b)| a - b).collect();
        Ok(population_std(&diff))
    }

    pub fn constraint_te(r: &[f64], benchmark: &[f64], te_max: f64) -> Result<f64, FinanceError> {
        Ok(Float::max(tracking_error(r, benchmark)? - te_max, 0.0))
    }

    pub fn constraint_ucits_10(w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for v in w {
            acc += Float::max(v - UCITS_SINGLE_CAP, 0.0);
        }
        acc
    }

    /// Sum of the weights strictly above the 5% line.
    pub fn large_holding_sum(w: &[f64]) -> f64 {
        let mask = mask_above(w, UCITS_AGG_LOWER);
        w.iter().zip(&mask).map(|(v, m)| v * m).sum()
    }

    pub fn constraint_ucits_5_40(w: &[f64]) -> f64 {
        Float::max(large_holding_sum(w) - UCITS_AGG_UPPER, 0.0)
    }

    pub fn constraint_min_weight(w: &[f64], min_weight: f64) -> f64 {
        let mask = mask_below(w, min_weight);
        w.iter().zip(&mask).map(|(v, m)| v * m).sum()
    }

    /// Number of strictly positive weights.
    pub fn active_count(w: &[f64]) -> usize {
        mask_above(w, 0.0).iter().filter(|m| **m > 0.0).count()
    }

    pub fn constraint_count_range(w: &[f64], low: usize, high: usize) -> f64 {
        let k = active_count(w) as f64;
        Float::max((low as f64 - k) * (high as f64 - k), 0.0)
    }

    pub fn constraint_group_mask(w: &[f64], set: &GroupMaskSet) -> Result<f64, FinanceError> {
        if set.assets() != w.len() {
            return Err(FinanceError::BadGroupMask("mask rows do not match asset count"));
        }
        let sums = set.group_sums(w);
        let mut acc = 0.0;
        for (target, sum) in set.max_weights().iter().zip(&sums) {
            acc += Float::abs(target - sum);
        }
        Ok(acc)
    }
}
