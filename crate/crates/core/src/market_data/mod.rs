//! Return/volume panels, expected returns and historical volatilities.
//!
//! Panels are stored instrument-major: row `i` is an instrument, column `c`
//! is a trading date with column 0 the most recent one. A date index `s`
//! passed to [`moving_average_returns`] counts from "today" (`s = 0`), which
//! is not itself a column of the panel, so the window for `s` starts at
//! column `s`.

mod csv_io;
mod synth;

pub use csv_io::{read_matrix_csv, read_panel_csv, write_matrix_csv, write_panel_csv, MatrixCsv};
pub use synth::{synthesize_panel, GeneratorConfig};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// N x T panel of per-period instrument returns and dollar volumes.
#[derive(Debug, Clone)]
pub struct ReturnsPanel {
    tickers: Vec<String>,
    dates: Vec<String>,
    returns: DMatrix<f64>,
    volumes: DMatrix<f64>,
    intraday: Option<DMatrix<f64>>,
    open_prices: Option<DMatrix<f64>>,
    synthetic: bool,
}

impl ReturnsPanel {
    pub fn new(
        tickers: Vec<String>,
        dates: Vec<String>,
        returns: DMatrix<f64>,
        volumes: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, t) = returns.shape();
        if n == 0 || t == 0 {
            return Err(Error::invalid("panel must have at least one instrument and one date"));
        }
        if volumes.shape() != (n, t) {
            return Err(Error::invalid(format!(
                "volumes shape {:?} does not match returns shape {:?}",
                volumes.shape(),
                (n, t)
            )));
        }
        if tickers.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: tickers.len() });
        }
        if dates.len() != t {
            return Err(Error::DimensionMismatch { expected: t, actual: dates.len() });
        }
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("returns must be finite"));
        }
        if volumes.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("volumes must be finite and nonnegative"));
        }
        Ok(Self {
            tickers,
            dates,
            returns,
            volumes,
            intraday: None,
            open_prices: None,
            synthetic: false,
        })
    }

    /// Attaches open-to-close returns and open prices, both N x T.
    pub fn with_intraday(
        mut self,
        intraday: DMatrix<f64>,
        open_prices: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        if intraday.shape() != self.returns.shape() {
            return Err(Error::invalid("intraday returns shape does not match panel"));
        }
        if intraday.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("intraday returns must be finite"));
        }
        if let Some(p) = &open_prices {
            if p.shape() != self.returns.shape() {
                return Err(Error::invalid("open prices shape does not match panel"));
            }
            if p.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::invalid("open prices must be positive"));
            }
        }
        self.intraday = Some(intraday);
        self.open_prices = open_prices;
        Ok(self)
    }

    pub(crate) fn mark_synthetic(mut self) -> Self {
        self.synthetic = true;
        self
    }

    pub fn n(&self) -> usize {
        self.returns.nrows()
    }

    pub fn t(&self) -> usize {
        self.returns.ncols()
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn volumes(&self) -> &DMatrix<f64> {
        &self.volumes
    }

    pub fn intraday(&self) -> Option<&DMatrix<f64>> {
        self.intraday.as_ref()
    }

    pub fn open_prices(&self) -> Option<&DMatrix<f64>> {
        self.open_prices.as_ref()
    }

    /// Whether the panel came from the synthetic generator.
    pub fn is_synthetic(&self) -> bool {
        self.synthetic
    }

    /// Panel restricted to the given instrument rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("cannot select an empty set of instruments"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n()) {
            return Err(Error::Range(format!("instrument index {bad} >= {}", self.n())));
        }
        let pick = |m: &DMatrix<f64>| m.select_rows(rows.iter());
        Ok(Self {
            tickers: rows.iter().map(|&i| self.tickers[i].clone()).collect(),
            dates: self.dates.clone(),
            returns: pick(&self.returns),
            volumes: pick(&self.volumes),
            intraday: self.intraday.as_ref().map(pick),
            open_prices: self.open_prices.as_ref().map(pick),
            synthetic: self.synthetic,
        })
    }
}

/// Per-instrument expected returns over a horizon of `horizon_days` periods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedReturns {
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub values: DVector<f64>,
    pub horizon_days: usize,
}

impl ExpectedReturns {
    pub fn new(values: DVector<f64>, horizon_days: usize) -> Result<Self> {
        if horizon_days == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        crate::linalg::check_finite(&values, "expected returns")?;
        Ok(Self { values, horizon_days })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Historical volatilities of the instruments that survived zero-variance
/// exclusion.
#[derive(Debug, Clone, Serialize)]
pub struct VolatilityProfile {
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub sigma: DVector<f64>,
    pub window: usize,
    /// Panel rows that `sigma` refers to.
    pub kept: Vec<usize>,
    /// Panel rows dropped for zero in-window variance.
    pub excluded: Vec<usize>,
}

impl VolatilityProfile {
    /// Builds a profile directly from volatilities, all of which must be
    /// positive.
    pub fn from_sigma(sigma: DVector<f64>, window: usize) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::invalid("empty volatility profile"));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("volatilities must be positive"));
        }
        let kept = (0..sigma.len()).collect();
        Ok(Self { sigma, window, kept, excluded: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Harmonic-mean-square aggregate: N / sigma_*^2 = sum_i 1 / sigma_i^2.
    pub fn sigma_star(&self) -> f64 {
        let n = self.sigma.len() as f64;
        let inv: f64 = self.sigma.iter().map(|s| 1.0 / (s * s)).sum();
        (n / inv).sqrt()
    }
}

/// d-period moving average of returns strictly before date `s`:
/// `E_i = (1/d) * sum_{s' = s+1}^{s+d} R_{i s'}`.
pub fn moving_average_returns(panel: &ReturnsPanel, d: usize, s: usize) -> Result<ExpectedReturns> {
    if d == 0 {
        return Err(Error::invalid("moving-average window must be positive"));
    }
    if s + d > panel.t() {
        return Err(Error::Range(format!(
            "window s + d = {} exceeds panel length {}",
            s + d,
            panel.t()
        )));
    }
    let window = panel.returns.columns(s, d);
    let values = window.column_sum() / d as f64;
    ExpectedReturns::new(values, d)
}

/// Sample standard deviation (T-1 denominator) of the most recent `window`
/// returns per instrument. Instruments with zero in-window variance are
/// reported in `excluded` and left out of `sigma`.
pub fn rolling_volatility(panel: &ReturnsPanel, window: usize) -> Result<VolatilityProfile> {
    if window < 2 {
        return Err(Error::invalid("volatility window must be at least 2"));
    }
    if window > panel.t() {
        return Err(Error::Range(format!(
            "volatility window {window} exceeds panel length {}",
            panel.t()
        )));
    }
    let block = panel.returns.columns(0, window);
    let mut sigma = Vec::with_capacity(panel.n());
    let mut kept = Vec::with_capacity(panel.n());
    let mut excluded = Vec::new();
    for i in 0..panel.n() {
        let row: Vec<f64> = block.row(i).iter().cloned().collect();
        let sd = sample_sd(&row);
        let scale = row.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if sd <= 8.0 * f64::EPSILON * scale || sd == 0.0 {
            excluded.push(i);
        } else {
            sigma.push(sd);
            kept.push(i);
        }
    }
    if !excluded.is_empty() {
        warn!(
            "{} instrument(s) have zero volatility over the last {window} periods and are excluded",
            excluded.len()
        );
    }
    if kept.is_empty() {
        return Err(Error::invalid("all instruments have zero volatility"));
    }
    Ok(VolatilityProfile {
        sigma: DVector::from_vec(sigma),
        window,
        kept,
        excluded,
    })
}

/// Average daily dollar volume over columns `offset..offset + window`.
pub fn rolling_addv(panel: &ReturnsPanel, window: usize, offset: usize) -> Result<DVector<f64>> {
    if window == 0 || offset + window > panel.t() {
        return Err(Error::Range(format!(
            "ADDV window {offset}..{} outside panel of length {}",
            offset + window,
            panel.t()
        )));
    }
    Ok(panel.volumes.columns(offset, window).column_sum() / window as f64)
}

/// Two-pass sample standard deviation with the (n - 1) denominator.
pub(crate) fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel_from(rows: &[&[f64]]) -> ReturnsPanel {
        let n = rows.len();
        let t = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().cloned()).collect();
        ReturnsPanel::new(
            (0..n).map(|i| format!("S{i}")).collect(),
            (0..t).map(|c| format!("d{c}")).collect(),
            DMatrix::from_row_slice(n, t, &flat),
            DMatrix::from_element(n, t, 1.0e6),
        )
        .unwrap()
    }

    #[test]
    fn moving_average_two_point() {
        let p = panel_from(&[&[0.1, 0.3]]);
        let e = moving_average_returns(&p, 2, 0).unwrap();
        assert!((e.values[0] - 0.2).abs() < 1e-15);
        assert_eq!(e.horizon_days, 2);
    }

    #[test]
    fn moving_average_constant_series() {
        let p = panel_from(&[&[0.05; 6], &[-0.02; 6]]);
        for d in 1..=6 {
            let e = moving_average_returns(&p, d, 0).unwrap();
            assert!((e.values[0] - 0.05).abs() < 1e-15);
            assert!((e.values[1] + 0.02).abs() < 1e-15);
        }
    }

    #[test]
    fn moving_average_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..10).map(|_| rng.random_range(-0.05..0.05)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let p = panel_from(&refs);
        for s in 0..=5 {
            let e = moving_average_returns(&p, 5, s).unwrap();
            for (i, row) in rows.iter().enumerate() {
                let mut acc = 0.0;
                for sp in (s + 1)..=(s + 5) {
                    acc += row[sp - 1];
                }
                assert!((e.values[i] - acc / 5.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn moving_average_window_too_long() {
        let p = panel_from(&[&[0.1, 0.2, 0.3]]);
        assert!(matches!(moving_average_returns(&p, 3, 1), Err(Error::Range(_))));
    }

    #[test]
    fn volatility_alternating_series() {
        let p = panel_from(&[&[1.0, -1.0, 1.0, -1.0]]);
        let v = rolling_volatility(&p, 4).unwrap();
        // mean 0, sum of squares 4, 4 / 3 under the unbiased estimator
        assert!((v.sigma[0] - (4.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((v.sigma[0] - 1.1547).abs() < 1e-4);
    }

    #[test]
    fn volatility_flags_constant_returns() {
        let p = panel_from(&[&[0.1, 0.1, 0.1, 0.1], &[0.1, 0.2, 0.3, 0.4]]);
        let v = rolling_volatility(&p, 4).unwrap();
        assert_eq!(v.excluded, vec![0]);
        assert_eq!(v.kept, vec![1]);
        assert_eq!(v.sigma.len(), 1);
    }

    #[test]
    fn volatility_full_window_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..15).map(|_| rng.random_range(-0.1..0.1)).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let p = panel_from(&refs);
        let v = rolling_volatility(&p, 15).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let n = row.len() as f64;
            let mut mean = 0.0;
            for x in row {
                mean += x;
            }
            mean /= n;
            let mut ss = 0.0;
            for x in row {
                ss += (x - mean).powi(2);
            }
            let oracle = (ss / (n - 1.0)).sqrt();
            assert!((v.sigma[i] - oracle).abs() < 1e-14);
        }
    }

    #[test]
    fn volatility_rejects_short_window() {
        let p = panel_from(&[&[0.1, 0.2, 0.3]]);
        assert!(matches!(rolling_volatility(&p, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sigma_star_of_uniform_profile() {
        let v = VolatilityProfile::from_sigma(DVector::from_element(10, 0.02), 21).unwrap();
        assert!((v.sigma_star() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn panel_rejects_negative_volume() {
        let r = DMatrix::from_element(1, 2, 0.0);
        let mut vol = DMatrix::from_element(1, 2, 1.0);
        vol[(0, 1)] = -1.0;
        assert!(ReturnsPanel::new(vec!["A".into()], vec!["a".into(), "b".into()], r, vol).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(n: usize, t: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-0.2f64..0.2, n * t)
        }

        proptest! {
            #[test]
            fn moving_average_is_linear(r1 in matrix(3, 8), r2 in matrix(3, 8),
                                        a in -3.0f64..3.0, b in -3.0f64..3.0,
                                        d in 1usize..5, s in 0usize..3) {
                let mk = |v: &[f64]| panel_from(&v.chunks(8).collect::<Vec<_>>());
                let combo: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| a * x + b * y).collect();
                let lhs = moving_average_returns(&mk(&combo), d, s).unwrap().values;
                let rhs = a * moving_average_returns(&mk(&r1), d, s).unwrap().values
                    + b * moving_average_returns(&mk(&r2), d, s).unwrap().values;
                prop_assert!((lhs - rhs).amax() < 1e-13);
            }

            #[test]
            fn volatility_is_scale_covariant(r in matrix(3, 10), lambda in 0.01f64..100.0) {
                let rows: Vec<&[f64]> = r.chunks(10).collect();
                let scaled: Vec<f64> = r.iter().map(|x| lambda * x).collect();
                let srows: Vec<&[f64]> = scaled.chunks(10).collect();
                let v1 = rolling_volatility(&panel_from(&rows), 10).unwrap();
                let v2 = rolling_volatility(&panel_from(&srows), 10).unwrap();
                prop_assert_eq!(&v1.kept, &v2.kept);
                for k in 0..v1.sigma.len() {
                    prop_assert!((v2.sigma[k] - lambda * v1.sigma[k]).abs() <= 1e-12 * v2.sigma[k]);
                }
            }
        }
    }
}
