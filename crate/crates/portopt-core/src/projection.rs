//! Maps from unconstrained pre-weights to valid portfolio weights.
//!
//! Softmax gives a dense, strictly positive weight vector; sparsemax is
//! the Euclidean projection onto the probability simplex and yields exact
//! zeros, which is what a sparse portfolio needs. Both are exposed as
//! eager functions here and as graph builders over the tape. The
//! threshold masks classify entries strictly: a value exactly at the
//! threshold does not trip the mask, on either side.

use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::tape::{self, Graph, NodeId, MASK_EPSILON};

/// Unconstrained trainable pre-weight vector.
pub type PreWeights = Vec<f64>;

/// Tolerance on the full-investment constraint `sum(w) = 1`.
pub const SIMPLEX_SUM_TOLERANCE: f64 = 1e-9;

/// A long-only, fully-invested weight vector: entries nonnegative and
/// summing to 1 within [`SIMPLEX_SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

/// Violation of the weight-vector invariants.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightError {
    Negative { index: usize, value: f64 },
    SumOffSimplex { sum: f64 },
    NonFinite { index: usize },
}

impl fmt::Display for WeightError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightError::Negative { index, value } => {
                write!(f, "weight {index} is negative ({value})")
            }
            WeightError::SumOffSimplex { sum } => {
                write!(f, "weights sum to {sum}, expected 1")
            }
            WeightError::NonFinite { index } => write!(f, "weight {index} is not finite"),
        }
    }
}

impl core::error::Error for WeightError {}

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self, WeightError> {
        let mut sum = 0.0;
        for (i, v) in w.iter().enumerate() {
            if !v.is_finite() {
                return Err(WeightError::NonFinite { index: i });
            }
            if *v < 0.0 {
                return Err(WeightError::Negative { index: i, value: *v });
            }
            sum += v;
        }
        if Float::abs(sum - 1.0) > SIMPLEX_SUM_TOLERANCE {
            return Err(WeightError::SumOffSimplex { sum });
        }
        Ok(WeightVector(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl core::ops::Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Stabilized softmax: `exp(z - max z) / sum(exp(z - max z))`. Entries
/// are strictly positive up to `exp` underflow on extremely spread
/// inputs.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut m = z[0];
    for v in &z[1..] {
        if *v > m {
            m = *v;
        }
    }
    let mut out: Vec<f64> = z.iter().map(|v| Float::exp(v - m)).collect();
    let mut sum = 0.0;
    for v in &out {
        sum += v;
    }
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Sparsemax: `[z - tau(z)]_+` with the threshold chosen over the
/// descending sort so the result lies on the probability simplex.
/// Components below their threshold are truncated to exact zeros.
pub fn sparsemax(z: &[f64]) -> Vec<f64> {
    let tau = sparsemax_threshold(z);
    z.iter().map(|v| Float::max(v - tau, 0.0)).collect()
}

/// The sparsemax threshold `tau(z) = (sum of the k(z) largest entries - 1) / k(z)`
/// where `k(z)` is the largest k with `1 + k z_(k) > sum_{j<=k} z_(j)`.
fn sparsemax_threshold(z: &[f64]) -> f64 {
    let mut sorted = z.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut k = 0;
    let mut support_sum = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        if 1.0 + (j + 1) as f64 * v > cumsum {
            k = j + 1;
            support_sum = cumsum;
        }
    }
    debug_assert!(k > 0);
    (support_sum - 1.0) / k as f64
}

/// Jacobian-vector product of sparsemax at `z`: the upstream gradient
/// restricted to the support, centered on the support mean, zero
/// elsewhere.
pub fn sparsemax_jacobian_vector_product(z: &[f64], upstream: &[f64]) -> Vec<f64> {
    let w = sparsemax(z);
    sparsemax_jvp_from_output(&w, upstream)
}

/// Same as [`sparsemax_jacobian_vector_product`] when the projected
/// output is already known.
pub(crate) fn sparsemax_jvp_from_output(w: &[f64], upstream: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), upstream.len());
    let mut support = 0usize;
    let mut mean = 0.0;
    for (wi, u) in w.iter().zip(upstream) {
        if *wi > 0.0 {
            support += 1;
            mean += u;
        }
    }
    mean /= support as f64;
    w.iter()
        .zip(upstream)
        .map(|(wi, u)| if *wi > 0.0 { u - mean } else { 0.0 })
        .collect()
}

/// Rounded sigmoid: `round(sigmoid(x) * 10^decimals) / 10^decimals`,
/// halves rounding away from zero (so the output at `x = 0` is 1 when
/// `decimals = 0`). Paired with the un-rounded sigmoid derivative when
/// used on the tape.
pub fn round_sigmoid(x: &[f64], decimals: u32) -> Vec<f64> {
    let scale = Float::powi(10.0f64, decimals as i32);
    x.iter().map(|v| Float::round(tape::sigmoid(*v) * scale) / scale).collect()
}

/// Binary mask of entries strictly above `threshold`. An entry exactly
/// at the threshold is not counted.
pub fn mask_above(x: &[f64], threshold: f64) -> Vec<f64> {
    x.iter().map(|v| if *v > threshold + MASK_EPSILON { 1.0 } else { 0.0 }).collect()
}

/// Binary mask of entries strictly below `threshold`. An entry exactly
/// at the threshold is not counted.
pub fn mask_below(x: &[f64], threshold: f64) -> Vec<f64> {
    x.iter().map(|v| if *v < threshold - MASK_EPSILON { 1.0 } else { 0.0 }).collect()
}

/// Which projection maps pre-weights to portfolio weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ProjectionKind {
    Softmax,
    /// Default: portfolios want exact zeros on unselected assets.
    #[default]
    Sparsemax,
}

/// Builds the chosen projection over the tape.
pub fn project_node(g: &mut Graph, kind: ProjectionKind, z: NodeId) -> NodeId {
    match kind {
        ProjectionKind::Softmax => softmax_node(g, z),
        ProjectionKind::Sparsemax => g.sparsemax(z),
    }
}

/// Stabilized softmax composed from tape primitives. The max-shift does
/// not perturb the gradient: the softmax Jacobian annihilates constant
/// shifts.
pub fn softmax_node(g: &mut Graph, z: NodeId) -> NodeId {
    let m = g.max(z);
    let shifted = g.sub(z, m);
    let e = g.exp(shifted);
    let total = g.sum(e);
    g.div(e, total)
}
