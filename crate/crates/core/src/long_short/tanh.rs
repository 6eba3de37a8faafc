//! Smoothed-sign iteration `w = C^{-1} [a E + b tanh(w / Delta)]`.
//!
//! `a` and `b` are recomputed on every pass from the Fano formulas with
//! `chi = tanh(w / Delta)` in place of the vector of ones.

use nalgebra::DVector;
use serde::Serialize;

use super::normalize_l1;
use crate::error::{Error, Result};
use crate::linalg;
use crate::risk::RiskModel;

#[derive(Debug, Clone)]
pub enum Delta {
    Uniform(f64),
    PerStock(DVector<f64>),
}

impl Delta {
    fn validate(&self, n: usize) -> Result<()> {
        match self {
            Delta::Uniform(d) if d.is_finite() && *d > 0.0 => Ok(()),
            Delta::PerStock(d) if d.len() == n && d.iter().all(|x| x.is_finite() && *x > 0.0) => Ok(()),
            Delta::PerStock(d) if d.len() != n => Err(Error::DimensionMismatch { expected: n, actual: d.len() }),
            _ => Err(Error::invalid("Delta must be positive and finite")),
        }
    }

    fn at(&self, i: usize) -> f64 {
        match self {
            Delta::Uniform(d) => *d,
            Delta::PerStock(d) => d[i],
        }
    }

    pub fn chi(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(w.len(), |i, _| (w[i] / self.at(i)).tanh())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TanhOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Weight kept on the previous iterate; 0 is the plain iteration.
    pub damping: f64,
}

impl Default for TanhOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-10, damping: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TanhResult {
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub weights: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm change per pass.
    pub changes: Vec<f64>,
    /// Sign changes of the weights per pass.
    pub sign_flips: Vec<usize>,
    pub a: f64,
    pub b: f64,
}

/// One undamped pass `C^{-1} [a E + b tanh(w / Delta)]` with given `a`, `b`.
pub fn tanh_step(
    model: &dyn RiskModel,
    e: &DVector<f64>,
    w: &DVector<f64>,
    a: f64,
    b: f64,
    delta: &Delta,
) -> Result<DVector<f64>> {
    delta.validate(e.len())?;
    model.solve(&(e * a + delta.chi(w) * b))
}

pub fn tanh_fixed_point(
    model: &dyn RiskModel,
    e: &DVector<f64>,
    delta: &Delta,
    opts: &TanhOptions,
) -> Result<TanhResult> {
    let n = model.dim();
    linalg::check_len(e, n)?;
    delta.validate(n)?;
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(Error::invalid("damping must lie in [0, 1)"));
    }
    let cinv_e = model.solve(e)?;
    let alpha = e.dot(&cinv_e).sqrt();
    // start from the Sharpe direction
    let mut w = normalize_l1(&cinv_e)?.0;
    let mut changes = Vec::new();
    let mut sign_flips = Vec::new();
    let (mut a, mut b) = (0.0, 0.0);
    for iter in 1..=opts.max_iter {
        let chi = delta.chi(&w);
        let cinv_chi = model.solve(&chi)?;
        let beta2 = chi.dot(&cinv_chi);
        let gamma = e.dot(&cinv_chi);
        let beta = beta2.sqrt();
        let lambda = alpha * beta + gamma;
        if !(beta > 0.0 && lambda > 1e-12 * alpha * beta) {
            return Err(Error::Infeasible(format!("Fano scalars degenerate at pass {iter} (lambda = {lambda:e})")));
        }
        a = 1.0 / lambda;
        b = alpha / (beta * lambda);
        let fresh = normalize_l1(&(&cinv_e * a + &cinv_chi * b))?.0;
        let next = normalize_l1(&(&w * opts.damping + fresh * (1.0 - opts.damping)))?.0;
        let change = (&next - &w).amax();
        let flips = (0..n).filter(|&i| next[i].signum() != w[i].signum() && next[i] != 0.0 && w[i] != 0.0).count();
        changes.push(change);
        sign_flips.push(flips);
        w = next;
        if change < opts.tol {
            return Ok(TanhResult { weights: w, converged: true, iterations: iter, changes, sign_flips, a, b });
        }
    }
    Ok(TanhResult { weights: w, converged: false, iterations: opts.max_iter, changes, sign_flips, a, b })
}
