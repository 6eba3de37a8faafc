//! Linear trading costs `T_i = tau_i |H_i|` with `tau_i = zeta sigma_i / A_i`.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::market_data::{ExpectedReturns, VolatilityProfile};

/// Average cost per dollar traded that the calibration targets (10 bps).
pub const MEAN_COST: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostModel {
    #[serde(serialize_with = "crate::serde_util::dvector")]
    tau: DVector<f64>,
    zeta: f64,
}

impl CostModel {
    pub fn new(tau: DVector<f64>, zeta: f64) -> Result<Self> {
        if tau.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::invalid("costs per dollar must be finite and nonnegative"));
        }
        if !(zeta.is_finite() && zeta > 0.0) {
            return Err(Error::invalid("zeta must be positive"));
        }
        Ok(Self { tau, zeta })
    }

    pub fn uniform(n: usize, tau: f64) -> Result<Self> {
        Self::new(DVector::from_element(n, tau), 1.0)
    }

    pub fn zero(n: usize) -> Self {
        Self { tau: DVector::zeros(n), zeta: 1.0 }
    }

    pub fn tau(&self) -> &DVector<f64> {
        &self.tau
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// `sum_i tau_i |H_i|` for dollar holdings `H`.
    pub fn cost(&self, holdings: &DVector<f64>) -> f64 {
        self.tau.iter().zip(holdings.iter()).map(|(t, h)| t * h.abs()).sum()
    }
}

/// `zeta = 10^-3 / mean(sigma_i / A_i)`, so that `mean(tau_i) = 10^-3`.
/// `addv` is aligned with `sigma.sigma`.
pub fn calibrate_costs(sigma: &VolatilityProfile, addv: &DVector<f64>) -> Result<CostModel> {
    calibrate_from_slices(&sigma.sigma, addv)
}

pub(crate) fn calibrate_from_slices(sigma: &DVector<f64>, addv: &DVector<f64>) -> Result<CostModel> {
    linalg::check_len(addv, sigma.len())?;
    if sigma.is_empty() {
        return Err(Error::invalid("empty universe"));
    }
    if let Some(i) = addv.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::invalid(format!("instrument {i} has no dollar volume; exclude it before calibrating")));
    }
    let ratio = sigma.component_div(addv);
    let zeta = MEAN_COST / ratio.mean();
    let mut tau = ratio * zeta;
    // one more pass removes the rounding left by the division above
    tau *= MEAN_COST / tau.mean();
    CostModel::new(tau, zeta)
}

/// `sign(E_i) max(|E_i| - tau_i, 0)`. Only an approximation to trading
/// costs inside the optimization.
pub fn effective_returns(e: &ExpectedReturns, costs: &CostModel) -> Result<ExpectedReturns> {
    ExpectedReturns::new(effective_values(&e.values, costs)?, e.horizon_days)
}

pub fn effective_values(e: &DVector<f64>, costs: &CostModel) -> Result<DVector<f64>> {
    linalg::check_len(e, costs.len())?;
    Ok(DVector::from_fn(e.len(), |i, _| {
        let m = (e[i].abs() - costs.tau[i]).max(0.0);
        if m == 0.0 {
            0.0
        } else {
            m.copysign(e[i])
        }
    }))
}
