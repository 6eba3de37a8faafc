use nalgebra::DVector;

use super::RiskModel;
use crate::error::{Error, Result};
use crate::linalg;

/// `C_ij = sigma_i sigma_j [(1 - rho) delta_ij + rho]`.
#[derive(Debug, Clone)]
pub struct UniformCorrelationModel {
    sigma: DVector<f64>,
    rho: f64,
}

impl UniformCorrelationModel {
    pub fn new(sigma: DVector<f64>, rho: f64) -> Result<Self> {
        let n = sigma.len();
        if n == 0 || sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("volatilities must be positive"));
        }
        let lower = if n > 1 { -1.0 / (n - 1) as f64 } else { f64::NEG_INFINITY };
        if !(rho > lower && rho < 1.0) {
            return Err(Error::invalid(format!("rho = {rho} outside ({lower}, 1) for N = {n}")));
        }
        Ok(Self { sigma, rho })
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `Psi(J)^{-1} y` for a subset of size m, in closed form.
    fn psi_inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        let m = y.len() as f64;
        let rho = self.rho;
        let shift = rho / (1.0 + (m - 1.0) * rho) * y.sum();
        y.map(|v| (v - shift) / (1.0 - rho))
    }
}

impl RiskModel for UniformCorrelationModel {
    fn dim(&self) -> usize {
        self.sigma.len()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        let c = if i == j { 1.0 } else { self.rho };
        self.sigma[i] * self.sigma[j] * c
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let y = self.sigma.component_mul(x);
        let total = y.sum();
        DVector::from_fn(x.len(), |i, _| self.sigma[i] * ((1.0 - self.rho) * y[i] + self.rho * total))
    }

    fn solve_subset(&self, subset: &[usize], x: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len(x, subset.len())?;
        let y = DVector::from_fn(subset.len(), |p, _| x[p] / self.sigma[subset[p]]);
        let z = self.psi_inverse(&y);
        Ok(DVector::from_fn(subset.len(), |p, _| z[p] / self.sigma[subset[p]]))
    }

    fn scaled(&self, factor: f64) -> Box<dyn RiskModel> {
        Box::new(UniformCorrelationModel { sigma: &self.sigma * factor.sqrt(), rho: self.rho })
    }
}

/// `w_i ∝ (1/(sigma_i (1 - rho))) [E~_i - rho / (1 + (N-1) rho) sum_j E~_j]`
/// with `E~_i = E_i / sigma_i`, normalized so that `sum w_i = 1`.
pub fn uniform_correlation_inverse_weights(
    model: &UniformCorrelationModel,
    e: &DVector<f64>,
) -> Result<DVector<f64>> {
    linalg::check_len(e, model.dim())?;
    let n = model.dim() as f64;
    let rho = model.rho;
    let et = e.component_div(&model.sigma);
    let shift = rho / (1.0 + (n - 1.0) * rho) * et.sum();
    let raw = DVector::from_fn(e.len(), |i, _| (et[i] - shift) / (model.sigma[i] * (1.0 - rho)));
    let total = raw.sum();
    if total.abs() <= 1e-14 * linalg::l1_norm(&raw) || total == 0.0 {
        return Err(Error::Degenerate("weights sum to zero and cannot be normalized to 1".into()));
    }
    Ok(raw / total)
}
