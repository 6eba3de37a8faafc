//! PCA risk models built from the sample correlation matrix.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{FactorModel, RiskModel};
use crate::error::{Error, Result};
use crate::market_data::ReturnsPanel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticalOptions {
    /// Drop the first principal component from the factor part.
    pub remove_market_mode: bool,
    /// Truncate eRank instead of rounding it (half-up).
    pub truncate_erank: bool,
    /// Lower bound on specific variances in correlation units.
    pub specific_floor: f64,
}

impl Default for StatisticalOptions {
    fn default() -> Self {
        Self { remove_market_mode: false, truncate_erank: false, specific_floor: 1e-6 }
    }
}

/// `exp(-sum p_a ln p_a)` with `p_a = lambda_a / sum(lambda)`.
pub fn effective_rank(eigenvalues: &[f64]) -> Result<f64> {
    if eigenvalues.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid("eigenvalues must be finite and nonnegative"));
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("effective rank of an all-zero spectrum"));
    }
    let entropy: f64 = eigenvalues
        .iter()
        .filter(|x| **x > 0.0)
        .map(|x| {
            let p = x / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

/// Number of factors from eRank: rounded half-up (or truncated), clamped to
/// `[1, rank - 1]`. A rank-1 spectrum keeps its single mode.
pub fn factor_count(erank: f64, rank: usize, truncate: bool) -> usize {
    let raw = if truncate { erank.floor() } else { (erank + 0.5).floor() };
    let raw = raw.max(1.0) as usize;
    let cap = rank.saturating_sub(1).max(1);
    if raw > cap {
        warn!("eRank factor count {raw} reduced to {cap} (correlation rank {rank})");
        cap
    } else {
        raw
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PrincipalComponent {
    pub eigenvalue: f64,
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub vector: DVector<f64>,
}

/// Statistical risk model: `C = diag(sigma) Psi^ diag(sigma)` with
/// `Psi^ = diag(specific) + sum_a lambda_a V_a V_a^T` over the kept components.
#[derive(Debug, Clone, Serialize)]
pub struct StatisticalModel {
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub sigma: DVector<f64>,
    pub kept_components: Vec<PrincipalComponent>,
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub specific: DVector<f64>,
    pub market_mode_removed: bool,
    pub market_component: PrincipalComponent,
    pub erank: f64,
    /// Factor count chosen from eRank, including the market mode.
    pub k: usize,
    pub rank: usize,
    /// Entries of the market mode with sign opposite to the majority.
    pub market_mode_negative_entries: usize,
    /// Instruments whose specific variance hit the floor.
    pub floored: Vec<usize>,
    #[serde(skip)]
    factor: FactorModel,
}

impl StatisticalModel {
    pub fn factor_model(&self) -> &FactorModel {
        &self.factor
    }

    pub fn into_factor_model(self) -> FactorModel {
        self.factor
    }

    /// `Psi^` as a dense matrix.
    pub fn correlation(&self) -> DMatrix<f64> {
        let n = self.sigma.len();
        let mut psi = DMatrix::from_diagonal(&self.specific);
        for c in &self.kept_components {
            psi += &c.vector * c.vector.transpose() * c.eigenvalue;
        }
        debug_assert_eq!(psi.nrows(), n);
        psi
    }
}

impl RiskModel for StatisticalModel {
    fn dim(&self) -> usize {
        self.factor.dim()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.factor.entry(i, j)
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.factor.apply(x)
    }

    fn solve_subset(&self, subset: &[usize], x: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor.solve_subset(subset, x)
    }

    fn as_factor(&self) -> Option<&FactorModel> {
        Some(&self.factor)
    }

    fn scaled(&self, factor: f64) -> Box<dyn RiskModel> {
        self.factor.scaled(factor)
    }
}

pub fn build_statistical_model(panel: &ReturnsPanel, remove_market_mode: bool) -> Result<StatisticalModel> {
    let opts = StatisticalOptions { remove_market_mode, ..Default::default() };
    build_statistical_model_from_returns(panel.returns(), &opts)
}

/// Builds the model from an N x T block of returns (any column order).
pub fn build_statistical_model_from_returns(
    returns: &DMatrix<f64>,
    opts: &StatisticalOptions,
) -> Result<StatisticalModel> {
    let (n, t) = returns.shape();
    if t < 2 {
        return Err(Error::invalid("statistical model needs T >= 2"));
    }
    if n == 0 {
        return Err(Error::invalid("statistical model needs N >= 1"));
    }
    // standardized rows scaled so that Psi = Z Z^T
    let mut z = DMatrix::zeros(n, t);
    let mut sigma = DVector::zeros(n);
    for i in 0..n {
        let row = returns.row(i);
        let mean = row.sum() / t as f64;
        let ss: f64 = row.iter().map(|x| (x - mean).powi(2)).sum();
        let sd = (ss / (t - 1) as f64).sqrt();
        let scale = row.amax();
        if !(sd > 8.0 * f64::EPSILON * scale) || !sd.is_finite() {
            return Err(Error::invalid(format!("instrument {i} has zero variance; exclude it first")));
        }
        sigma[i] = sd;
        let norm = ss.sqrt();
        for s in 0..t {
            z[(i, s)] = (returns[(i, s)] - mean) / norm;
        }
    }

    let (values, vectors) = leading_eigensystem(&z);
    let lmax = values.first().copied().unwrap_or(0.0);
    let rank = values.iter().filter(|l| **l > 1e-10 * lmax).count().max(1);
    let positive: Vec<f64> = values.iter().map(|l| l.max(0.0)).collect();
    let erank = effective_rank(&positive)?;
    let k = factor_count(erank, rank, opts.truncate_erank).min(values.len());
    from_eigensystem(sigma, &values, vectors, erank, k, rank, opts)
}

/// Builds the model from a correlation matrix and volatilities directly.
pub fn build_statistical_model_from_correlation(
    psi: &DMatrix<f64>,
    sigma: DVector<f64>,
    opts: &StatisticalOptions,
) -> Result<StatisticalModel> {
    let n = psi.nrows();
    if !psi.is_square() || sigma.len() != n || n == 0 {
        return Err(Error::invalid("correlation must be N x N with N volatilities"));
    }
    let eig = SymmetricEigen::new(psi.clone());
    let (values, vectors) = sorted(eig.eigenvalues, eig.eigenvectors);
    let lmax = values[0];
    let rank = values.iter().filter(|l| **l > 1e-10 * lmax).count().max(1);
    let positive: Vec<f64> = values.iter().map(|l| l.max(0.0)).collect();
    let erank = effective_rank(&positive)?;
    let k = factor_count(erank, rank, opts.truncate_erank);
    from_eigensystem(sigma, &values, vectors, erank, k, rank, opts)
}

/// Eigenpairs of `Z Z^T` in descending order, through the smaller Gram matrix.
fn leading_eigensystem(z: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (n, t) = z.shape();
    if t >= n {
        let eig = SymmetricEigen::new(z * z.transpose());
        return sorted(eig.eigenvalues, eig.eigenvectors);
    }
    let eig = SymmetricEigen::new(z.transpose() * z);
    let (values, u) = sorted(eig.eigenvalues, eig.eigenvectors);
    let lmax = values[0];
    let mut vectors = DMatrix::zeros(n, values.len());
    let mut kept = Vec::new();
    for (a, &l) in values.iter().enumerate() {
        if l > 1e-12 * lmax {
            let v = z * u.column(a) / l.sqrt();
            vectors.set_column(kept.len(), &v);
            kept.push(l);
        }
    }
    let m = kept.len();
    (kept, vectors.columns(0, m).into_owned())
}

/// Descending eigenvalues; equal values keep their original index order.
fn sorted(values: DVector<f64>, vectors: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("finite eigenvalues"));
    let vals = order.iter().map(|&a| values[a]).collect();
    let vecs = vectors.select_columns(order.iter());
    (vals, vecs)
}

fn from_eigensystem(
    sigma: DVector<f64>,
    values: &[f64],
    mut vectors: DMatrix<f64>,
    erank: f64,
    k: usize,
    rank: usize,
    opts: &StatisticalOptions,
) -> Result<StatisticalModel> {
    let n = sigma.len();
    // orient the market mode so most entries are positive
    if vectors.column(0).sum() < 0.0 {
        vectors.column_mut(0).neg_mut();
    }
    for a in 1..vectors.ncols() {
        let col = vectors.column(a);
        let imax = col.iamax();
        if col[imax] < 0.0 {
            vectors.column_mut(a).neg_mut();
        }
    }
    let market = PrincipalComponent { eigenvalue: values[0], vector: vectors.column(0).into_owned() };
    let negatives = market.vector.iter().filter(|x| **x < 0.0).count();
    if negatives > 0 {
        warn!("market mode has {negatives} negative entries");
    }

    let first = if opts.remove_market_mode { 1 } else { 0 };
    let kept: Vec<PrincipalComponent> = (first..k)
        .map(|a| PrincipalComponent { eigenvalue: values[a], vector: vectors.column(a).into_owned() })
        .collect();

    let mut specific = DVector::from_element(n, 1.0);
    for c in &kept {
        for i in 0..n {
            specific[i] -= c.eigenvalue * c.vector[i] * c.vector[i];
        }
    }
    let mut floored = Vec::new();
    for i in 0..n {
        if specific[i] < opts.specific_floor {
            floored.push(i);
            specific[i] = opts.specific_floor;
        }
    }
    if !floored.is_empty() {
        warn!("{} specific variance(s) raised to the floor {}", floored.len(), opts.specific_floor);
    }

    let kf = kept.len();
    let xi2 = DVector::from_fn(n, |i, _| sigma[i] * sigma[i] * specific[i]);
    let omega = DMatrix::from_fn(n, kf, |i, a| sigma[i] * kept[a].vector[i]);
    let phi = DMatrix::from_fn(kf, kf, |a, b| if a == b { kept[a].eigenvalue } else { 0.0 });
    let factor = FactorModel::new(xi2, omega, phi)?;
    Ok(StatisticalModel {
        sigma,
        kept_components: kept,
        specific,
        market_mode_removed: opts.remove_market_mode,
        market_component: market,
        erank,
        k,
        rank,
        market_mode_negative_entries: negatives,
        floored,
        factor,
    })
}
