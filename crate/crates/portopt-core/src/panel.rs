//! Return panels and the seeded synthetic market generator.
//!
//! A [`ReturnsPanel`] is the full input to a training run: per-period
//! asset returns on a shared date axis, plus an optional benchmark
//! series. File ingestion lives in the companion crate; this module owns
//! the in-memory representation, price-to-return conversions, and a
//! factor-model generator that stands in for downloaded market data in
//! tests and bundled scenarios.

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum PanelError {
    /// A price row needed for a return conversion is nonpositive.
    NonPositivePrice { row: usize, col: usize },
    /// Too few rows to compute anything.
    TooFewRows { rows: usize },
    /// Construction with inconsistent dimensions.
    ShapeMismatch(&'static str),
    /// A return at or below -100% cannot be compounded into log space.
    ReturnBelowFloor { row: usize, col: usize },
}

impl fmt::Display for PanelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PanelError::NonPositivePrice { row, col } => {
                write!(f, "nonpositive price at row {row}, column {col}")
            }
            PanelError::TooFewRows { rows } => write!(f, "need at least 3 price rows, got {rows}"),
            PanelError::ShapeMismatch(msg) => write!(f, "panel shape mismatch: {msg}"),
            PanelError::ReturnBelowFloor { row, col } => {
                write!(f, "return at row {row}, column {col} is -100% or worse")
            }
        }
    }
}

impl core::error::Error for PanelError {}

/// T x n panel of per-period asset returns with a shared date axis and
/// an optional benchmark return series.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    assets: Vec<String>,
    dates: Vec<String>,
    returns: Rc<Matrix>,
    benchmark: Option<Vec<f64>>,
}

impl ReturnsPanel {
    pub fn new(
        assets: Vec<String>,
        dates: Vec<String>,
        returns: Matrix,
        benchmark: Option<Vec<f64>>,
    ) -> Result<Self, PanelError> {
        if returns.cols() != assets.len() {
            return Err(PanelError::ShapeMismatch("columns do not match asset names"));
        }
        if returns.rows() != dates.len() {
            return Err(PanelError::ShapeMismatch("rows do not match date axis"));
        }
        if let Some(b) = &benchmark {
            if b.len() != dates.len() {
                return Err(PanelError::ShapeMismatch("benchmark length does not match dates"));
            }
        }
        Ok(ReturnsPanel { assets, dates, returns: Rc::new(returns), benchmark })
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn periods(&self) -> usize {
        self.dates.len()
    }

    /// Shared handle to the return matrix, for graph construction.
    pub fn returns(&self) -> Rc<Matrix> {
        Rc::clone(&self.returns)
    }

    pub fn benchmark(&self) -> Option<&[f64]> {
        self.benchmark.as_deref()
    }

    /// Column of returns for one asset.
    pub fn asset_column(&self, index: usize) -> Vec<f64> {
        (0..self.periods()).map(|t| self.returns.get(t, index)).collect()
    }

    /// Portfolio return series under fixed weights.
    pub fn portfolio_returns(&self, w: &[f64]) -> Vec<f64> {
        self.returns.matvec(w)
    }

    /// Sub-panel restricted to the given asset indices and period window.
    pub fn slice(&self, asset_indices: &[usize], start: usize, len: usize) -> ReturnsPanel {
        assert!(start + len <= self.periods(), "window out of range");
        let assets: Vec<String> = asset_indices.iter().map(|&i| self.assets[i].clone()).collect();
        let dates: Vec<String> = self.dates[start..start + len].to_vec();
        let mut m = Matrix::zeros(len, asset_indices.len());
        for (t, row) in (start..start + len).enumerate() {
            for (c, &i) in asset_indices.iter().enumerate() {
                m.set(t, c, self.returns.get(row, i));
            }
        }
        let benchmark = self.benchmark.as_ref().map(|b| b[start..start + len].to_vec());
        ReturnsPanel { assets, dates, returns: Rc::new(m), benchmark }
    }

    /// Converts every return to log space: `ln(1 + r)`. Equivalent to
    /// recomputing `ln(p_t / p_{t-1})` from the underlying prices.
    pub fn to_log_returns(&self) -> Result<ReturnsPanel, PanelError> {
        let mut m = Matrix::zeros(self.periods(), self.n_assets());
        for t in 0..self.periods() {
            for c in 0..self.n_assets() {
                let r = self.returns.get(t, c);
                if r <= -1.0 {
                    return Err(PanelError::ReturnBelowFloor { row: t, col: c });
                }
                m.set(t, c, Float::ln(1.0 + r));
            }
        }
        let benchmark = match &self.benchmark {
            Some(b) => {
                let mut out = Vec::with_capacity(b.len());
                for (t, r) in b.iter().enumerate() {
                    if *r <= -1.0 {
                        return Err(PanelError::ReturnBelowFloor { row: t, col: self.n_assets() });
                    }
                    out.push(Float::ln(1.0 + r));
                }
                Some(out)
            }
            None => None,
        };
        Ok(ReturnsPanel {
            assets: self.assets.clone(),
            dates: self.dates.clone(),
            returns: Rc::new(m),
            benchmark,
        })
    }
}

/// Simple returns from a T x n price matrix: `r_t = p_t / p_{t-1} - 1`.
/// The first price row is consumed, so the output has T-1 rows.
pub fn simple_returns_from_prices(prices: &Matrix) -> Result<Matrix, PanelError> {
    returns_from_prices(prices, |now, prev| now / prev - 1.0)
}

/// Log returns from a T x n price matrix: `r_t = ln(p_t / p_{t-1})`.
pub fn log_returns_from_prices(prices: &Matrix) -> Result<Matrix, PanelError> {
    returns_from_prices(prices, |now, prev| Float::ln(now / prev))
}

fn returns_from_prices(
    prices: &Matrix,
    convert: impl Fn(f64, f64) -> f64,
) -> Result<Matrix, PanelError> {
    if prices.rows() < 3 {
        return Err(PanelError::TooFewRows { rows: prices.rows() });
    }
    for r in 0..prices.rows() {
        for c in 0..prices.cols() {
            if prices.get(r, c) <= 0.0 {
                return Err(PanelError::NonPositivePrice { row: r, col: c });
            }
        }
    }
    let mut out = Matrix::zeros(prices.rows() - 1, prices.cols());
    for r in 1..prices.rows() {
        for c in 0..prices.cols() {
            out.set(r - 1, c, convert(prices.get(r, c), prices.get(r - 1, c)));
        }
    }
    Ok(out)
}

/// Per-asset parameter in a synthetic market spec: one shared value, a
/// seeded uniform draw, or explicit per-asset values.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(untagged))]
pub enum ParamSpec {
    /// One value for every asset.
    Shared(f64),
    /// Drawn uniformly from `[low, high)` per asset, seeded.
    Range { low: f64, high: f64 },
    /// Per-asset values; length must equal the asset count.
    PerAsset(Vec<f64>),
}

impl ParamSpec {
    fn resolve(
        &self,
        assets: usize,
        rng: &mut ChaCha8Rng,
        what: &'static str,
    ) -> Result<Vec<f64>, PanelError> {
        match self {
            ParamSpec::Shared(v) => Ok(alloc::vec![*v; assets]),
            ParamSpec::Range { low, high } => Ok((0..assets)
                .map(|_| {
                    let u: f64 = rng.random();
                    low + (high - low) * u
                })
                .collect()),
            ParamSpec::PerAsset(vs) => {
                if vs.len() != assets {
                    return Err(PanelError::ShapeMismatch(what));
                }
                Ok(vs.clone())
            }
        }
    }
}

/// Seeded factor-model market: `r_t = mu + B (sigma_f . f_t) + d . eps_t`
/// with standard normal factor scores `f_t` and idiosyncratic noise
/// `eps_t`. The implied covariance `B diag(sigma_f^2) B^T + diag(d^2)` is
/// positive semidefinite by construction. The benchmark column is the
/// equal-weight average of all assets.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticMarketSpec {
    pub assets: usize,
    pub periods: usize,
    pub seed: u64,
    /// Per-period expected return of each asset.
    pub means: ParamSpec,
    /// Per-factor volatilities; the factor count is this vector's length.
    pub factor_vols: Vec<f64>,
    /// Loadings are drawn uniformly from this interval, seeded.
    pub loading_range: (f64, f64),
    /// Idiosyncratic volatility of each asset.
    pub idio_vols: ParamSpec,
}

/// A realized synthetic market: parameters drawn from the seed, ready to
/// generate return panels or report the implied covariance.
#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    spec: SyntheticMarketSpec,
    means: Vec<f64>,
    /// n x k factor loadings.
    loadings: Matrix,
    idio_vols: Vec<f64>,
    /// Generator state after the parameter draws; panel generation
    /// continues from here.
    panel_rng: ChaCha8Rng,
}

impl SyntheticMarket {
    /// Draws means, loadings, and idiosyncratic volatilities from the
    /// spec's seed, in that order (loadings row-major); the panel's
    /// factor scores and noise continue the same stream.
    pub fn from_spec(spec: SyntheticMarketSpec) -> Result<Self, PanelError> {
        if spec.assets == 0 || spec.periods < 2 {
            return Err(PanelError::ShapeMismatch("need at least 1 asset and 2 periods"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let means = spec.means.resolve(spec.assets, &mut rng, "means length")?;
        let k = spec.factor_vols.len();
        let (lo, hi) = spec.loading_range;
        let mut loadings = Matrix::zeros(spec.assets, k);
        for i in 0..spec.assets {
            for j in 0..k {
                let u: f64 = rng.random();
                loadings.set(i, j, lo + (hi - lo) * u);
            }
        }
        let idio_vols = spec.idio_vols.resolve(spec.assets, &mut rng, "idio_vols length")?;
        Ok(SyntheticMarket { spec, means, loadings, idio_vols, panel_rng: rng })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn loadings(&self) -> &Matrix {
        &self.loadings
    }

    /// Implied covariance `B diag(sigma_f^2) B^T + diag(d^2)`.
    pub fn covariance(&self) -> Matrix {
        let n = self.spec.assets;
        let k = self.spec.factor_vols.len();
        let mut cov = Matrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let mut acc = 0.0;
                for j in 0..k {
                    let fv = self.spec.factor_vols[j];
                    acc += self.loadings.get(a, j) * self.loadings.get(b, j) * fv * fv;
                }
                if a == b {
                    acc += self.idio_vols[a] * self.idio_vols[a];
                }
                cov.set(a, b, acc);
            }
        }
        cov
    }

    /// Generates the return panel. Repeated calls with the same spec
    /// produce identical panels; the benchmark column is the equal-weight
    /// average of the assets. Dates are a synthetic ISO-8601 axis.
    pub fn generate(&self) -> ReturnsPanel {
        let n = self.spec.assets;
        let t = self.spec.periods;
        let k = self.spec.factor_vols.len();
        let mut rng = self.panel_rng.clone();
        let mut returns = Matrix::zeros(t, n);
        let mut benchmark = Vec::with_capacity(t);
        for row in 0..t {
            let scores: Vec<f64> =
                (0..k).map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * self.spec.factor_vols[j]
                }).collect();
            let mut row_sum = 0.0;
            for i in 0..n {
                let mut r = self.means[i];
                for (j, s) in scores.iter().enumerate() {
                    r += self.loadings.get(i, j) * s;
                }
                let z: f64 = rng.sample(StandardNormal);
                r += self.idio_vols[i] * z;
                returns.set(row, i, r);
                row_sum += r;
            }
            benchmark.push(row_sum / n as f64);
        }
        let assets = asset_names(n);
        let dates = synthetic_dates(t);
        ReturnsPanel::new(assets, dates, returns, Some(benchmark))
            .expect("generated panel is dimensionally consistent")
    }
}

/// Convenience wrapper: realize the spec and generate its panel.
pub fn synthesize(spec: &SyntheticMarketSpec) -> Result<ReturnsPanel, PanelError> {
    Ok(SyntheticMarket::from_spec(spec.clone())?.generate())
}

/// Zero-padded synthetic asset names A001, A002, ...
pub fn asset_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| alloc::format!("A{i:03}")).collect()
}

/// Synthetic ISO-8601 date axis (daily from 2020-01-01, ignoring
/// calendars; only ordering matters).
fn synthetic_dates(t: usize) -> Vec<String> {
    // Days since an epoch rendered as a valid, strictly increasing
    // ISO-8601 axis: years of 12 fixed 28-day months.
    (0..t)
        .map(|i| {
            let year = 2020 + i / 336;
            let month = (i % 336) / 28 + 1;
            let day = (i % 28) + 1;
            alloc::format!("{year:04}-{month:02}-{day:02}")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn price_matrix() -> Matrix {
        Matrix::from_rows(3, 1, vec![100.0, 110.0, 99.0])
    }

    #[test]
    fn simple_returns_match_hand_computation() {
        let r = simple_returns_from_prices(&price_matrix()).unwrap();
        assert!((r.get(0, 0) - 0.10).abs() < 1e-12);
        assert!((r.get(1, 0) - (-0.10)).abs() < 1e-12);
    }

    #[test]
    fn log_returns_match_hand_computation() {
        let prices = Matrix::from_rows(3, 1, vec![100.0, 110.0, 110.0]);
        let r = log_returns_from_prices(&prices).unwrap();
        assert!((r.get(0, 0) - (1.1f64).ln()).abs() < 1e-12);
        assert_eq!(r.get(1, 0), 0.0);
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let prices = Matrix::from_rows(4, 2, vec![50.0; 8]);
        let r = log_returns_from_prices(&prices).unwrap();
        assert!(r.data().iter().all(|v| *v == 0.0));
        let r = simple_returns_from_prices(&prices).unwrap();
        assert!(r.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn log_return_never_exceeds_simple_return() {
        let prices = Matrix::from_rows(
            5,
            2,
            vec![100.0, 20.0, 104.0, 21.3, 99.5, 19.8, 111.0, 22.0, 108.2, 25.0],
        );
        let simple = simple_returns_from_prices(&prices).unwrap();
        let log = log_returns_from_prices(&prices).unwrap();
        for (s, l) in simple.data().iter().zip(log.data()) {
            assert!(l <= s, "log {l} above simple {s}");
        }
    }

    #[test]
    fn nonpositive_price_is_rejected_with_location() {
        let prices = Matrix::from_rows(3, 2, vec![100.0, 50.0, 101.0, 0.0, 99.0, 50.0]);
        assert_eq!(
            log_returns_from_prices(&prices).unwrap_err(),
            PanelError::NonPositivePrice { row: 1, col: 1 }
        );
    }

    #[test]
    fn too_few_price_rows_is_rejected() {
        let prices = Matrix::from_rows(2, 1, vec![100.0, 101.0]);
        assert_eq!(
            simple_returns_from_prices(&prices).unwrap_err(),
            PanelError::TooFewRows { rows: 2 }
        );
    }

    fn small_spec() -> SyntheticMarketSpec {
        SyntheticMarketSpec {
            assets: 4,
            periods: 60,
            seed: 7,
            means: ParamSpec::Shared(0.0005),
            factor_vols: vec![0.01, 0.004],
            loading_range: (0.2, 1.0),
            idio_vols: ParamSpec::Shared(0.008),
        }
    }

    #[test]
    fn same_seed_generates_identical_panels() {
        let a = synthesize(&small_spec()).unwrap();
        let b = synthesize(&small_spec()).unwrap();
        assert_eq!(a, b);
        let mut other = small_spec();
        other.seed = 8;
        assert_ne!(synthesize(&other).unwrap(), a);
    }

    #[test]
    fn zero_noise_zero_loading_returns_the_means() {
        let spec = SyntheticMarketSpec {
            assets: 3,
            periods: 10,
            seed: 1,
            means: ParamSpec::PerAsset(vec![0.001, -0.002, 0.0]),
            factor_vols: vec![0.05],
            loading_range: (0.0, 0.0),
            idio_vols: ParamSpec::Shared(0.0),
        };
        let panel = synthesize(&spec).unwrap();
        for t in 0..panel.periods() {
            let row: Vec<f64> = (0..3).map(|c| panel.returns().get(t, c)).collect();
            assert_eq!(row, vec![0.001, -0.002, 0.0]);
        }
    }

    #[test]
    fn benchmark_is_the_equal_weight_average() {
        let panel = synthesize(&small_spec()).unwrap();
        let b = panel.benchmark().unwrap();
        for t in 0..panel.periods() {
            let avg: f64 =
                (0..panel.n_assets()).map(|c| panel.returns().get(t, c)).sum::<f64>() / 4.0;
            assert!((b[t] - avg).abs() < 1e-15);
        }
    }

    #[test]
    fn sample_covariance_converges_to_the_spec_covariance() {
        let spec = SyntheticMarketSpec {
            assets: 5,
            periods: 100_000,
            seed: 12,
            means: ParamSpec::Shared(0.0),
            factor_vols: vec![0.012, 0.005],
            loading_range: (0.3, 1.1),
            idio_vols: ParamSpec::Shared(0.01),
        };
        let market = SyntheticMarket::from_spec(spec).unwrap();
        let panel = market.generate();
        let target = market.covariance();
        let n = panel.n_assets();
        let t = panel.periods();
        // Column means.
        let mut means = vec![0.0; n];
        for row in 0..t {
            for c in 0..n {
                means[c] += panel.returns().get(row, c);
            }
        }
        for m in &mut means {
            *m /= t as f64;
        }
        let mut sample = Matrix::zeros(n, n);
        for row in 0..t {
            for a in 0..n {
                for b in 0..n {
                    let da = panel.returns().get(row, a) - means[a];
                    let db = panel.returns().get(row, b) - means[b];
                    sample.set(a, b, sample.get(a, b) + da * db);
                }
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for a in 0..n {
            for b in 0..n {
                let s = sample.get(a, b) / t as f64;
                let d = s - target.get(a, b);
                num += d * d;
                den += target.get(a, b) * target.get(a, b);
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.05, "Frobenius relative error {rel}");
    }

    #[test]
    fn slice_preserves_columns_and_window() {
        let panel = synthesize(&small_spec()).unwrap();
        let sub = panel.slice(&[2, 0], 10, 20);
        assert_eq!(sub.n_assets(), 2);
        assert_eq!(sub.periods(), 20);
        assert_eq!(sub.assets()[0], panel.assets()[2]);
        assert_eq!(sub.returns().get(0, 0), panel.returns().get(10, 2));
        assert_eq!(sub.benchmark().unwrap()[0], panel.benchmark().unwrap()[10]);
    }

    #[test]
    fn log_conversion_matches_price_route() {
        let prices = Matrix::from_rows(4, 1, vec![100.0, 104.0, 101.0, 103.0]);
        let simple = simple_returns_from_prices(&prices).unwrap();
        let direct = log_returns_from_prices(&prices).unwrap();
        let panel = ReturnsPanel::new(
            vec![String::from("X")],
            vec![String::from("d1"), String::from("d2"), String::from("d3")],
            simple,
            None,
        )
        .unwrap();
        let logged = panel.to_log_returns().unwrap();
        for t in 0..3 {
            assert!((logged.returns().get(t, 0) - direct.get(t, 0)).abs() < 1e-15);
        }
    }
}
