//! Positive-definite covariance models and their inverse operators.
//!
//! Every model implements [`RiskModel`], which exposes `C x`, `C^{-1} x` and
//! the inverse of any principal submatrix `C(J)`. Factor-structured models
//! answer those queries through K x K systems only; the remaining models fall
//! back to dense Cholesky factorizations.

mod factor;
mod io;
mod padding;
mod statistical;
mod uniform;

pub use factor::{remove_market_mode_factor, FactorModel, MarketModeVector};
pub use io::{read_risk_model, write_risk_model, RiskModelKind};
pub use padding::{pad_with_constraints, projected_inverse_apply, PaddedInverse};
pub use statistical::{
    build_statistical_model, build_statistical_model_from_correlation, build_statistical_model_from_returns,
    effective_rank, factor_count, PrincipalComponent, StatisticalModel, StatisticalOptions,
};
pub use uniform::{uniform_correlation_inverse_weights, UniformCorrelationModel};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest N for which dense materialization is allowed by default.
pub const DENSE_CAP: usize = 2000;

pub trait RiskModel: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;

    fn entry(&self, i: usize, j: usize) -> f64;

    /// `C x`.
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |i, _| (0..n).map(|j| self.entry(i, j) * x[j]).sum())
    }

    /// `[C(J)]^{-1} x` where `x` and the result are indexed by position in
    /// `subset`.
    fn solve_subset(&self, subset: &[usize], x: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(x, subset.len())?;
        let m = DMatrix::from_fn(subset.len(), subset.len(), |a, b| self.entry(subset[a], subset[b]));
        linalg::spd_solve(m, x, "restricted covariance")
    }

    /// `[C(J)]^{-1} X` for several right-hand sides at once.
    fn solve_subset_many(&self, subset: &[usize], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for c in 0..x.ncols() {
            out.set_column(c, &self.solve_subset(subset, &x.column(c).into_owned())?);
        }
        Ok(out)
    }

    /// `C^{-1} x`.
    fn solve(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let all: Vec<usize> = (0..self.dim()).collect();
        self.solve_subset(&all, x)
    }

    /// Factor-model view, when the model has one. Used for constraint padding.
    fn as_factor(&self) -> Option<&FactorModel> {
        None
    }

    /// The same model with covariance multiplied by `factor > 0`.
    fn scaled(&self, factor: f64) -> Box<dyn RiskModel>;

    fn to_dense_capped(&self, cap: usize) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if n > cap {
            return Err(Error::Range(format!(
                "dense materialization of N = {n} exceeds the cap of {cap}"
            )));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| self.entry(i, j)))
    }

    fn to_dense(&self) -> Result<DMatrix<f64>> {
        self.to_dense_capped(DENSE_CAP)
    }
}

/// View of a model restricted to the instruments in `subset`.
#[derive(Debug)]
pub struct Restricted<'a> {
    model: &'a dyn RiskModel,
    subset: Vec<usize>,
}

impl<'a> Restricted<'a> {
    pub fn new(model: &'a dyn RiskModel, subset: Vec<usize>) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::invalid("restricted model needs a nonempty subset"));
        }
        if let Some(&bad) = subset.iter().find(|&&i| i >= model.dim()) {
            return Err(Error::Range(format!("index {bad} outside model of size {}", model.dim())));
        }
        Ok(Self { model, subset })
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }
}

impl RiskModel for Restricted<'_> {
    fn dim(&self) -> usize {
        self.subset.len()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.model.entry(self.subset[i], self.subset[j])
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let full = linalg::scatter(x, &self.subset, self.model.dim());
        linalg::gather(&self.model.apply(&full), &self.subset)
    }

    fn solve_subset(&self, subset: &[usize], x: &DVector<f64>) -> Result<DVector<f64>> {
        let mapped: Vec<usize> = subset.iter().map(|&k| self.subset[k]).collect();
        self.model.solve_subset(&mapped, x)
    }

    fn scaled(&self, factor: f64) -> Box<dyn RiskModel> {
        // a borrowed view cannot own a scaled copy; materialize instead
        let dense = self.to_dense().expect("restricted view within dense cap");
        Box::new(DenseCovariance::new(dense * factor).expect("scaled PD matrix stays PD"))
    }
}

/// Dense symmetric positive-definite covariance with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct DenseCovariance {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl DenseCovariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Model("covariance must be a nonempty square matrix".into()));
        }
        let n = matrix.nrows();
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (matrix[(i, j)], matrix[(j, i)]);
                if (a - b).abs() > 1e-12 * (a.abs() + b.abs()).max(1e-300) {
                    return Err(Error::Model(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        let chol = linalg::cholesky(matrix.clone(), "covariance")?;
        Ok(Self { matrix, chol })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl RiskModel for DenseCovariance {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    fn solve(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(x, self.dim())?;
        Ok(self.chol.solve(x))
    }

    fn scaled(&self, factor: f64) -> Box<dyn RiskModel> {
        Box::new(DenseCovariance::new(&self.matrix * factor).expect("positive rescaling keeps PD"))
    }

    fn to_dense_capped(&self, cap: usize) -> Result<DMatrix<f64>> {
        if self.dim() > cap {
            return Err(Error::Range(format!("N = {} exceeds dense cap {cap}", self.dim())));
        }
        Ok(self.matrix.clone())
    }
}

/// Diagonal covariance `C = diag(variances)`.
#[derive(Debug, Clone)]
pub struct DiagonalCovariance {
    variances: DVector<f64>,
}

impl DiagonalCovariance {
    pub fn new(variances: DVector<f64>) -> Result<Self> {
        if variances.is_empty() || variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Model("diagonal variances must be positive".into()));
        }
        Ok(Self { variances })
    }

    pub fn variances(&self) -> &DVector<f64> {
        &self.variances
    }
}

impl RiskModel for DiagonalCovariance {
    fn dim(&self) -> usize {
        self.variances.len()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.variances[i]
        } else {
            0.0
        }
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.variances.component_mul(x)
    }

    fn solve_subset(&self, subset: &[usize], x: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(x, subset.len())?;
        Ok(DVector::from_fn(subset.len(), |k, _| x[k] / self.variances[subset[k]]))
    }

    fn scaled(&self, factor: f64) -> Box<dyn RiskModel> {
        Box::new(DiagonalCovariance { variances: &self.variances * factor })
    }
}

/// N x m matrix of linear homogeneous constraints `G^T w = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    g: DMatrix<f64>,
}

impl ConstraintSet {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        let (n, m) = g.shape();
        if m >= n && m > 0 {
            return Err(Error::invalid(format!("need fewer constraints than instruments ({m} >= {n})")));
        }
        if m > 0 {
            let sv = g.clone().svd(false, false).singular_values;
            let max = sv.max();
            let min = sv.min();
            if !(min > 1e-12 * max) {
                return Err(Error::invalid("constraint columns are linearly dependent"));
            }
        }
        Ok(Self { g })
    }

    /// The single dollar-neutrality constraint `sum_i w_i = 0`.
    pub fn dollar_neutral(n: usize) -> Self {
        Self { g: DMatrix::from_element(n, 1, 1.0) }
    }

    pub fn empty(n: usize) -> Self {
        Self { g: DMatrix::zeros(n, 0) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn m(&self) -> usize {
        self.g.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.g.select_rows(rows.iter())
    }
}

/// Solution of `max r^T w - w^T C(J) w / 2` subject to `G(J)^T w = c`, i.e.
/// `w = C(J)^{-1} (r - G mu)` with multipliers `mu`.
#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    pub w: DVector<f64>,
    pub mu: DVector<f64>,
}

/// Equality-constrained solve on a subset via the model's inverse operator.
pub fn constrained_solve(
    model: &dyn RiskModel,
    subset: &[usize],
    g: &DMatrix<f64>,
    r: &DVector<f64>,
    c: &DVector<f64>,
) -> Result<ConstrainedSolution> {
    let rs = DMatrix::from_column_slice(r.len(), 1, r.as_slice());
    let cs = DMatrix::from_column_slice(c.len(), 1, c.as_slice());
    Ok(constrained_solve_many(model, subset, g, &rs, &cs)?.remove(0))
}

/// [`constrained_solve`] for every column pair of `r` and `c`, sharing one
/// factorization of the subset covariance.
pub fn constrained_solve_many(
    model: &dyn RiskModel,
    subset: &[usize],
    g: &DMatrix<f64>,
    r: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<Vec<ConstrainedSolution>> {
    let (m, p) = (g.ncols(), r.ncols());
    if r.nrows() != subset.len() || c.ncols() != p || (m > 0 && (g.nrows() != subset.len() || c.nrows() != m)) {
        return Err(Error::invalid("constraint shape does not match subset"));
    }
    let mut rhs = DMatrix::zeros(subset.len(), p + m);
    rhs.columns_mut(0, p).copy_from(r);
    if m > 0 {
        rhs.columns_mut(p, m).copy_from(g);
    }
    let solved = model.solve_subset_many(subset, &rhs)?;
    let base = solved.columns(0, p);
    if m == 0 {
        return Ok((0..p).map(|k| ConstrainedSolution { w: base.column(k).into_owned(), mu: DVector::zeros(0) }).collect());
    }
    let cinv_g = solved.columns(p, m);
    let gram = linalg::cholesky(g.transpose() * cinv_g, "constraint Gram matrix G^T C^-1 G")?;
    let mu = gram.solve(&(g.transpose() * base - c));
    let w = base - cinv_g * &mu;
    Ok((0..p).map(|k| ConstrainedSolution { w: w.column(k).into_owned(), mu: mu.column(k).into_owned() }).collect())
}

/// Splits a correlation matrix as `Psi = (1 - rho) I + rho 1 1^T + Delta`
/// with `rho` the mean off-diagonal correlation. Returns `(rho, Delta)`.
pub fn average_correlation_decomposition(psi: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let n = psi.nrows();
    if n < 2 || !psi.is_square() {
        return Err(Error::invalid("need a square correlation matrix with N >= 2"));
    }
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off += psi[(i, j)];
            }
        }
    }
    let rho = off / (n * (n - 1)) as f64;
    let delta = DMatrix::from_fn(n, n, |i, j| {
        let base = if i == j { 1.0 } else { rho };
        psi[(i, j)] - base
    });
    Ok((rho, delta))
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random well-conditioned SPD matrix `A A^T / n + diag(0.1..1.1)`.
    pub fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut c = &a * a.transpose() / n as f64;
        for i in 0..n {
            c[(i, i)] += rng.random_range(0.1..1.1);
        }
        c
    }

    pub fn random_factor_model(n: usize, k: usize, seed: u64) -> FactorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi2 = DVector::from_fn(n, |_, _| rng.random_range(0.2..1.5));
        let omega = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let mut phi = &b * b.transpose();
        for a in 0..k {
            phi[(a, a)] += 0.5;
        }
        FactorModel::new(xi2, omega, phi).unwrap()
    }
}
