//! Slow, independent ground-truth computations for tests and the
//! replication study.
//!
//! Nothing here shares code with the fast paths it validates: the
//! Euclidean simplex projection runs by bisection on the threshold
//! (where `projection::sparsemax` sorts), and the grid search evaluates
//! objectives pointwise with no gradients at all.

use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

/// Upper bound on the number of grid candidates the enumerator will
/// visit before refusing.
pub const MAX_GRID_CANDIDATES: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    /// The requested grid would enumerate more candidates than
    /// [`MAX_GRID_CANDIDATES`].
    GridTooLarge { candidates: u128 },
    /// `1/step` is not usable as a grid resolution.
    BadStep { step: f64 },
    /// No grid candidate produced a finite objective value.
    NoFiniteCandidate,
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::GridTooLarge { candidates } => {
                write!(f, "simplex grid has {candidates} candidates, above the {MAX_GRID_CANDIDATES} guard")
            }
            OracleError::BadStep { step } => write!(f, "invalid grid step {step}"),
            OracleError::NoFiniteCandidate => write!(f, "objective was non-finite on every grid point"),
        }
    }
}

impl core::error::Error for OracleError {}

/// Best point found by [`simplex_grid_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridBest {
    pub weights: Vec<f64>,
    pub value: f64,
    /// Number of candidates evaluated.
    pub candidates: u64,
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Exhaustively minimizes `objective` over the probability simplex
/// discretized at resolution `step` (all compositions of `round(1/step)`
/// units into `n` parts). Candidates are visited in ascending
/// lexicographic order of the composition, and ties keep the earlier
/// candidate, so the result is deterministic. Candidates where the
/// objective is non-finite are skipped.
pub fn simplex_grid_search<F>(
    mut objective: F,
    n: usize,
    step: f64,
) -> Result<GridBest, OracleError>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(n >= 1, "need at least one asset");
    if !(step > 0.0 && step <= 1.0) {
        return Err(OracleError::BadStep { step });
    }
    let units = Float::round(1.0 / step) as u64;
    if units == 0 {
        return Err(OracleError::BadStep { step });
    }
    let candidates = binomial(units as u128 + n as u128 - 1, n as u128 - 1);
    if candidates > MAX_GRID_CANDIDATES {
        return Err(OracleError::GridTooLarge { candidates });
    }

    let mut counts = alloc::vec![0u64; n];
    counts[n - 1] = units;
    let mut weights = alloc::vec![0.0f64; n];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut visited: u64 = 0;

    loop {
        visited += 1;
        for (w, c) in weights.iter_mut().zip(&counts) {
            *w = *c as f64 / units as f64;
        }
        let value = objective(&weights);
        if value.is_finite() {
            match &best {
                Some((_, bv)) if *bv <= value => {}
                _ => best = Some((weights.clone(), value)),
            }
        }

        // Lexicographic successor: bump the rightmost position that has
        // budget after it, then park the remaining suffix on the tail.
        let mut advanced = false;
        let mut suffix = 0u64;
        for j in (0..n - 1).rev() {
            suffix += counts[j + 1];
            if suffix > 0 {
                counts[j] += 1;
                for c in counts.iter_mut().skip(j + 1) {
                    *c = 0;
                }
                counts[n - 1] = suffix - 1;
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }

    debug_assert_eq!(visited as u128, candidates);
    match best {
        Some((weights, value)) => Ok(GridBest { weights, value, candidates: visited }),
        None => Err(OracleError::NoFiniteCandidate),
    }
}

/// Euclidean projection of `z` onto the probability simplex, by
/// bisection on the threshold followed by an exact refinement on the
/// identified support. Deliberately shares nothing with
/// `projection::sparsemax`.
pub fn euclidean_simplex_projection(z: &[f64]) -> Vec<f64> {
    assert!(!z.is_empty());
    let n = z.len() as f64;
    let mut hi = z[0];
    let mut lo = z[0];
    for v in &z[1..] {
        hi = Float::max(hi, *v);
        lo = Float::min(lo, *v);
    }
    // g(tau) = sum(max(z - tau, 0)) - 1 is continuous and decreasing,
    // positive at lo - 1/n and negative at hi.
    let mut lo = lo - 1.0 / n;
    let excess = |tau: f64| -> f64 {
        let mut acc = 0.0;
        for v in z {
            acc += Float::max(v - tau, 0.0);
        }
        acc - 1.0
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * Float::max(1.0, Float::abs(hi)) {
            break;
        }
    }
    let tau_approx = 0.5 * (lo + hi);
    // Exact threshold for the support the bisection identified.
    let mut support = 0.0;
    let mut support_sum = 0.0;
    for v in z {
        if *v > tau_approx {
            support += 1.0;
            support_sum += v;
        }
    }
    let tau = (support_sum - 1.0) / support;
    z.iter().map(|v| Float::max(v - tau, 0.0)).collect()
}
