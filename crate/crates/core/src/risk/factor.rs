use nalgebra::{DMatrix, DVector};

use super::RiskModel;
use crate::error::{Error, Result};
use crate::linalg;

/// K-factor covariance `C = diag(xi2) + Omega phi Omega^T`.
///
/// Inverses of any principal submatrix `C(J)` go through the K x K matrix
/// `Q(J) = phi^{-1} + sum_{i in J} Omega_i Omega_i^T / xi2_i`.
#[derive(Debug, Clone)]
pub struct FactorModel {
    xi2: DVector<f64>,
    omega: DMatrix<f64>,
    phi: DMatrix<f64>,
    phi_inv: DMatrix<f64>,
}

impl FactorModel {
    pub fn new(xi2: DVector<f64>, omega: DMatrix<f64>, phi: DMatrix<f64>) -> Result<Self> {
        let n = xi2.len();
        let k = omega.ncols();
        if n == 0 {
            return Err(Error::Model("factor model needs at least one instrument".into()));
        }
        if omega.nrows() != n {
            return Err(Error::Model(format!("loadings have {} rows, expected {n}", omega.nrows())));
        }
        if phi.shape() != (k, k) {
            return Err(Error::Model(format!("factor covariance must be {k} x {k}")));
        }
        if k > n {
            return Err(Error::Model(format!("K = {k} exceeds N = {n}")));
        }
        if let Some(i) = xi2.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Model(format!("specific variance {i} is not positive: {}", xi2[i])));
        }
        if omega.iter().any(|x| !x.is_finite()) {
            return Err(Error::Model("loadings must be finite".into()));
        }
        for a in 0..k {
            for b in 0..a {
                let (x, y) = (phi[(a, b)], phi[(b, a)]);
                if (x - y).abs() > 1e-12 * (x.abs() + y.abs()).max(1e-300) {
                    return Err(Error::Model("factor covariance is not symmetric".into()));
                }
            }
        }
        let phi_inv = if k == 0 {
            DMatrix::zeros(0, 0)
        } else {
            linalg::spd_inverse(phi.clone(), "factor covariance").map_err(|e| match e {
                Error::Numerical { condition, .. } => {
                    Error::Model(format!("factor covariance is not positive-definite (condition {condition:.3e})"))
                }
                other => other,
            })?
        };
        Ok(Self { xi2, omega, phi, phi_inv })
    }

    /// Pure specific-risk model (K = 0).
    pub fn diagonal(xi2: DVector<f64>) -> Result<Self> {
        let n = xi2.len();
        Self::new(xi2, DMatrix::zeros(n, 0), DMatrix::zeros(0, 0))
    }

    pub fn xi2(&self) -> &DVector<f64> {
        &self.xi2
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn factor_cov(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn factor_cov_inverse(&self) -> &DMatrix<f64> {
        &self.phi_inv
    }

    pub fn k(&self) -> usize {
        self.omega.ncols()
    }

    /// Same specific risks and factor covariance, new loadings.
    pub fn with_loadings(&self, omega: DMatrix<f64>) -> Result<Self> {
        if omega.shape() != self.omega.shape() {
            return Err(Error::Model("replacement loadings have the wrong shape".into()));
        }
        Ok(Self { omega, ..self.clone() })
    }

    /// `Q(J)`.
    pub fn q_matrix(&self, subset: &[usize]) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(subset.len(), self.k(), |p, a| self.omega[(subset[p], a)] / self.xi2[subset[p]]);
        let rows = self.omega.select_rows(subset.iter());
        &self.phi_inv + rows.transpose() * scaled
    }
}

impl RiskModel for FactorModel {
    fn dim(&self) -> usize {
        self.xi2.len()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        let spec = if i == j { self.xi2[i] } else { 0.0 };
        if self.k() == 0 {
            return spec;
        }
        let oi = self.omega.row(i);
        let oj = self.omega.row(j);
        spec + (oi * &self.phi * oj.transpose())[(0, 0)]
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let spec = self.xi2.component_mul(x);
        if self.k() == 0 {
            return spec;
        }
        spec + &self.omega * (&self.phi * (self.omega.transpose() * x))
    }

    fn solve_subset(&self, subset: &[usize], x: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(x, subset.len())?;
        let out = self.solve_subset_many(subset, &DMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
        Ok(out.column(0).into_owned())
    }

    fn solve_subset_many(&self, subset: &[usize], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != subset.len() {
            return Err(Error::DimensionMismatch { expected: subset.len(), actual: x.nrows() });
        }
        let scaled = DMatrix::from_fn(x.nrows(), x.ncols(), |p, c| x[(p, c)] / self.xi2[subset[p]]);
        if self.k() == 0 {
            return Ok(scaled);
        }
        let rows = self.omega.select_rows(subset.iter());
        let q = self.q_matrix(subset);
        // Omega(J)^T Xi^{-1} x
        let proj = rows.transpose() * &scaled;
        let y = linalg::cholesky(q, "Q(J)")?.solve(&proj);
        let back = rows * y;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |p, c| scaled[(p, c)] - back[(p, c)] / self.xi2[subset[p]]))
    }

    fn as_factor(&self) -> Option<&FactorModel> {
        Some(self)
    }

    fn scaled(&self, factor: f64) -> Box<dyn RiskModel> {
        Box::new(
            FactorModel::new(&self.xi2 * factor, self.omega.clone(), &self.phi * factor)
                .expect("positive rescaling keeps the model valid"),
        )
    }
}

/// Benchmark vector `v > 0` against which the loadings are orthogonalized.
#[derive(Debug, Clone, PartialEq)]
pub enum MarketModeVector {
    /// Equally weighted benchmark, `v_i = 1`.
    Ones,
    /// `v_i = 1 / C_ii`, winsorized at the given lower/upper quantiles.
    InverseVariance { lower_quantile: f64, upper_quantile: f64 },
    Custom(DVector<f64>),
}

impl Default for MarketModeVector {
    fn default() -> Self {
        MarketModeVector::Ones
    }
}

impl MarketModeVector {
    pub fn inverse_variance_default() -> Self {
        MarketModeVector::InverseVariance { lower_quantile: 0.01, upper_quantile: 0.99 }
    }

    pub fn resolve(&self, model: &dyn RiskModel) -> Result<DVector<f64>> {
        let n = model.dim();
        match self {
            MarketModeVector::Ones => Ok(DVector::from_element(n, 1.0)),
            MarketModeVector::Custom(v) => {
                linalg::check_len(v, n)?;
                Ok(v.clone())
            }
            MarketModeVector::InverseVariance { lower_quantile, upper_quantile } => {
                if !(0.0..=1.0).contains(lower_quantile)
                    || !(0.0..=1.0).contains(upper_quantile)
                    || lower_quantile > upper_quantile
                {
                    return Err(Error::invalid("winsorization quantiles must satisfy 0 <= lo <= hi <= 1"));
                }
                let raw: Vec<f64> = (0..n).map(|i| 1.0 / model.entry(i, i)).collect();
                let lo = quantile(&raw, *lower_quantile);
                let hi = quantile(&raw, *upper_quantile);
                Ok(DVector::from_iterator(n, raw.into_iter().map(|x| x.clamp(lo, hi))))
            }
        }
    }
}

/// Linear-interpolation sample quantile.
pub(crate) fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Projects the loadings orthogonal to a positive vector `v`:
/// `Omega' = Omega - v (v^T Omega) / (v^T v)`, so `sum_i v_i Omega'_iA = 0`.
pub fn remove_market_mode_factor(model: &FactorModel, v: &DVector<f64>) -> Result<FactorModel> {
    linalg::check_len(v, model.dim())?;
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::invalid("market-mode vector must be strictly positive"));
    }
    let omega = model.loadings();
    let vt_omega = v.transpose() * omega;
    let projected = omega - v * vt_omega / v.dot(v);
    model.with_loadings(projected)
}
