//! Long-short weights built from iterated expected returns.
//!
//! `E^(1) = E`, `E^(p+1) = C^{-1} E^(p)` and
//! `E^ = sum_{p <= n_opt} (b^ h)^{p-1} E^(p)`, with weights `w = a C^{-1} E^`
//! normalized so that `sum |w_i| = 1`. The factor
//! `h^2 = (E C^{-1} E) / (E^(2) C^{-1} E^(2))` makes `b^` a pure number.

mod bounds;
mod tanh;

pub use bounds::{apply_position_bounds, BoundedSolution, PositionBounds};
pub use tanh::{tanh_fixed_point, tanh_step, Delta, TanhOptions, TanhResult};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::risk::{pad_with_constraints, projected_inverse_apply, ConstraintSet, FactorModel, RiskModel};

#[derive(Debug, Clone)]
pub struct MultiOptSpec {
    pub n_opt: usize,
    pub b_hat: f64,
    pub constraints: Option<ConstraintSet>,
    pub bounds: Option<PositionBounds>,
}

impl Default for MultiOptSpec {
    fn default() -> Self {
        Self { n_opt: 1, b_hat: 1.0, constraints: None, bounds: None }
    }
}

impl MultiOptSpec {
    pub fn new(n_opt: usize, b_hat: f64) -> Self {
        Self { n_opt, b_hat, ..Self::default() }
    }

    pub fn dollar_neutral(mut self, n: usize) -> Self {
        self.constraints = Some(ConstraintSet::dollar_neutral(n));
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_opt == 0 {
            return Err(Error::invalid("n_opt must be at least 1"));
        }
        if !self.b_hat.is_finite() {
            return Err(Error::invalid("b_hat must be finite"));
        }
        if let Some(c) = &self.constraints {
            if c.n() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: c.n() });
            }
        }
        if let Some(b) = &self.bounds {
            if b.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: b.len() });
            }
        }
        Ok(())
    }
}

/// `E^(1) .. E^(n_opt)` and the normalization `h`.
#[derive(Debug, Clone, Serialize)]
pub struct IteratedReturns {
    #[serde(serialize_with = "crate::serde_util::dvector_list")]
    pub levels: Vec<DVector<f64>>,
    pub h: f64,
}

impl IteratedReturns {
    pub fn compute(model: &dyn RiskModel, e: &DVector<f64>, n_opt: usize) -> Result<Self> {
        linalg::check_len(e, model.dim())?;
        linalg::check_finite(e, "expected returns")?;
        if e.iter().all(|x| *x == 0.0) {
            return Err(Error::invalid("expected returns are identically zero"));
        }
        // h needs E^(3) even when the series stops earlier
        let depth = n_opt.max(3);
        let mut levels = vec![e.clone()];
        for p in 1..depth {
            let next = model.solve(&levels[p - 1])?;
            levels.push(next);
        }
        let num = e.dot(&levels[1]);
        let den = levels[1].dot(&levels[2]);
        if !(num > 0.0 && den > 0.0) {
            return Err(Error::Degenerate("E^(2) vanishes, so h is undefined".into()));
        }
        levels.truncate(n_opt);
        Ok(Self { levels, h: (num / den).sqrt() })
    }

    /// `sum_p (b_hat h)^{p-1} E^(p)`.
    pub fn combined(&self, b_hat: f64) -> DVector<f64> {
        let bt = b_hat * self.h;
        let mut out = DVector::zeros(self.levels[0].len());
        let mut coef = 1.0;
        for lvl in &self.levels {
            out += lvl * coef;
            coef *= bt;
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiOptWeights {
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub weights: DVector<f64>,
    /// Overall normalization `a > 0` (unbounded case) or the scale `1/kappa`
    /// of the bounded problem.
    pub a: f64,
    pub b_tilde: f64,
    pub iterated: IteratedReturns,
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub e_hat: DVector<f64>,
    pub bounded: Option<BoundedSolution>,
}

/// `C^{-1} x`, or its constrained version annihilating the columns of `G`.
/// Factor models use the padded inverse; other models the projection form.
pub fn constrained_inverse(
    model: &dyn RiskModel,
    constraints: Option<&ConstraintSet>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    match constraints {
        None => model.solve(x),
        Some(c) if c.m() == 0 => model.solve(x),
        Some(c) => match model.as_factor() {
            Some(f) => pad_with_constraints(f, c)?.solve(x),
            None => {
                let all: Vec<usize> = (0..model.dim()).collect();
                projected_inverse_apply(model, &all, c.matrix(), x)
            }
        },
    }
}

/// Scales `raw` to unit L1 norm with a positive factor. Returns `(w, a)`.
pub fn normalize_l1(raw: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let s = linalg::l1_norm(raw);
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::Degenerate("weights vanish and cannot be normalized".into()));
    }
    Ok((raw / s, 1.0 / s))
}

pub fn multiply_optimized_weights(
    model: &dyn RiskModel,
    e: &DVector<f64>,
    spec: &MultiOptSpec,
) -> Result<MultiOptWeights> {
    spec.validate(model.dim())?;
    let iterated = IteratedReturns::compute(model, e, spec.n_opt)?;
    let e_hat = iterated.combined(spec.b_hat);
    let b_tilde = spec.b_hat * iterated.h;
    if let Some(bounds) = &spec.bounds {
        let sol = apply_position_bounds(&e_hat, model, bounds, spec.constraints.as_ref())?;
        return Ok(MultiOptWeights {
            weights: sol.weights.clone(),
            a: sol.scale,
            b_tilde,
            iterated,
            e_hat,
            bounded: Some(sol),
        });
    }
    let raw = constrained_inverse(model, spec.constraints.as_ref(), &e_hat)?;
    let (weights, a) = normalize_l1(&raw)?;
    Ok(MultiOptWeights { weights, a, b_tilde, iterated, e_hat, bounded: None })
}

#[derive(Debug, Clone, Serialize)]
pub struct RescalingCase {
    pub zeta: f64,
    pub lambda: f64,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RescalingReport {
    pub cases: Vec<RescalingCase>,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const RESCALING_TOLERANCE: f64 = 1e-10;

/// Recomputes the weights under `E -> zeta E`, `C -> lambda C` for every pair
/// and records the largest deviation from the unscaled weights.
pub fn rescaling_check(
    model: &dyn RiskModel,
    e: &DVector<f64>,
    spec: &MultiOptSpec,
    pairs: &[(f64, f64)],
) -> Result<RescalingReport> {
    let base = multiply_optimized_weights(model, e, spec)?.weights;
    let mut cases = Vec::with_capacity(pairs.len());
    for &(zeta, lambda) in pairs {
        if !(zeta > 0.0 && lambda > 0.0) {
            return Err(Error::invalid("rescaling factors must be positive"));
        }
        let scaled = model.scaled(lambda);
        let w = multiply_optimized_weights(scaled.as_ref(), &(e * zeta), spec)?.weights;
        cases.push(RescalingCase { zeta, lambda, max_abs_diff: (w - &base).amax() });
    }
    let max_abs_diff = cases.iter().map(|c| c.max_abs_diff).fold(0.0, f64::max);
    Ok(RescalingReport { cases, max_abs_diff, tolerance: RESCALING_TOLERANCE, passed: max_abs_diff <= RESCALING_TOLERANCE })
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearizedSolution {
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub weights: DVector<f64>,
    pub a: f64,
    pub b_tilde: f64,
    /// False when `C - b~ I` was not positive-definite and the truncated
    /// series was used instead.
    pub exact: bool,
}

/// Solves `(C - b~ I) w = a E` with `sum |w| = 1`. When the shifted matrix is
/// not positive-definite the truncated series with `fallback_terms` terms is
/// returned instead.
pub fn linearized_weights(
    model: &dyn RiskModel,
    e: &DVector<f64>,
    b_tilde: f64,
    fallback_terms: usize,
) -> Result<LinearizedSolution> {
    linalg::check_len(e, model.dim())?;
    let shifted = match model.as_factor() {
        Some(f) if f.xi2().iter().all(|x| *x - b_tilde > 0.0) => {
            let xi2 = f.xi2().map(|x| x - b_tilde);
            FactorModel::new(xi2, f.loadings().clone(), f.factor_cov().clone()).and_then(|m| m.solve(e))
        }
        _ => model.to_dense().and_then(|c| {
            let n = c.nrows();
            let m = c - DMatrix::identity(n, n) * b_tilde;
            linalg::spd_solve(m, e, "shifted covariance C - b I")
        }),
    };
    match shifted {
        Ok(raw) => {
            let (weights, a) = normalize_l1(&raw)?;
            Ok(LinearizedSolution { weights, a, b_tilde, exact: true })
        }
        Err(err) if err.is_numerical() => {
            warn!("C - b~ I is not positive-definite ({err}); using the truncated series with {fallback_terms} terms");
            let terms = fallback_terms.max(1);
            let mut term = model.solve(e)?;
            let mut raw = term.clone();
            for _ in 1..terms {
                term = model.solve(&term)? * b_tilde;
                raw += &term;
            }
            let (weights, a) = normalize_l1(&raw)?;
            Ok(LinearizedSolution { weights, a, b_tilde, exact: false })
        }
        Err(err) => Err(err),
    }
}

/// Weights from `(C - theta Xi)^{-1} E` for `theta < 1`; at `theta = 1` the
/// limit `w_i ∝ eps_i / xi_i^2` with `eps` the residuals of the regression of
/// `E` on the loadings with weights `1/xi^2` and no intercept.
pub fn regression_limit_weights(model: &FactorModel, e: &DVector<f64>, theta: f64) -> Result<DVector<f64>> {
    linalg::check_len(e, model.dim())?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Range(format!("theta = {theta} outside (0, 1]")));
    }
    let xi2 = model.xi2();
    let raw = if theta < 1.0 {
        let shifted = FactorModel::new(xi2 * (1.0 - theta), model.loadings().clone(), model.factor_cov().clone())
            .map_err(|e| Error::Numerical { message: format!("shifted model is singular: {e}"), condition: f64::INFINITY })?;
        shifted.solve(e)?
    } else {
        weighted_residuals(model.loadings(), xi2, e)?.component_div(xi2)
    };
    Ok(normalize_l1(&raw)?.0)
}

/// Residuals of the weighted least-squares fit of `y` on the columns of `x`
/// with weights `1/xi2`.
pub fn weighted_residuals(x: &DMatrix<f64>, xi2: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x.ncols() == 0 {
        return Ok(y.clone());
    }
    let z = xi2.map(|v| 1.0 / v);
    let xz = DMatrix::from_fn(x.nrows(), x.ncols(), |i, a| x[(i, a)] * z[i]);
    let normal = x.transpose() * &xz;
    let rhs = xz.transpose() * y;
    let coef = linalg::spd_solve(normal, &rhs, "regression normal equations")?;
    Ok(y - x * coef)
}

#[cfg(test)]
mod tests;
