//! Maximization of `G = E / f(V)` over weights with `sum w_i = 1`.
//!
//! Every maximizer lies in the two-dimensional family
//! `w = a C^{-1} E + b C^{-1} nu` (`nu` the vector of ones), so only three
//! scalars matter: `alpha^2 = E C^{-1} E`, `beta^2 = nu C^{-1} nu` and
//! `gamma = E C^{-1} nu`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use roots::{find_root_brent, find_roots_quadratic, Convergency, Roots};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::risk::RiskModel;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied risk function `f(V)` with its derivative.
#[derive(Clone)]
pub struct CustomRatio {
    pub name: String,
    pub f: ScalarFn,
    pub f_prime: ScalarFn,
}

impl fmt::Debug for CustomRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomRatio({})", self.name)
    }
}

#[derive(Debug, Clone)]
pub enum RatioSpec {
    /// `f = sqrt(V)`.
    Sharpe,
    /// `f = V`.
    Fano,
    /// `f = V^p`, `p > 0`.
    Power(f64),
    /// `f = exp(xi V)`, `xi > 0`.
    Exp(f64),
    Custom(CustomRatio),
}

impl fmt::Display for RatioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RatioSpec::Sharpe => write!(f, "sharpe"),
            RatioSpec::Fano => write!(f, "fano"),
            RatioSpec::Power(p) => write!(f, "power(p={p})"),
            RatioSpec::Exp(xi) => write!(f, "exp(xi={xi})"),
            RatioSpec::Custom(c) => write!(f, "custom({})", c.name),
        }
    }
}

impl RatioSpec {
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let spec = RatioSpec::Custom(CustomRatio { name: name.into(), f: Arc::new(f), f_prime: Arc::new(f_prime) });
        spec.validate()?;
        Ok(spec)
    }

    /// Checks `f > 0` and `f' > 0` on a log-spaced sample of `V` in
    /// `[1e-8, 1e4]`, plus the parameter ranges of the built-in kinds.
    /// Overflow to `+inf` counts as positive.
    pub fn validate(&self) -> Result<()> {
        match self {
            RatioSpec::Power(p) if !(p.is_finite() && *p > 0.0) => {
                return Err(Error::invalid(format!("power exponent must be positive, got {p}")))
            }
            RatioSpec::Exp(xi) if !(xi.is_finite() && *xi > 0.0) => {
                return Err(Error::invalid(format!("exponential rate must be positive, got {xi}")))
            }
            _ => {}
        }
        for k in 0..=240 {
            let v = 10f64.powf(-8.0 + 12.0 * k as f64 / 240.0);
            let (f, fp) = (self.f(v), self.f_prime(v));
            if !(f > 0.0 && fp > 0.0) {
                return Err(Error::invalid(format!(
                    "{self}: need f > 0 and f' > 0, got f({v:e}) = {f}, f'({v:e}) = {fp}"
                )));
            }
        }
        Ok(())
    }

    pub fn f(&self, v: f64) -> f64 {
        match self {
            RatioSpec::Sharpe => v.sqrt(),
            RatioSpec::Fano => v,
            RatioSpec::Power(p) => v.powf(*p),
            RatioSpec::Exp(xi) => (xi * v).exp(),
            RatioSpec::Custom(c) => (c.f)(v),
        }
    }

    pub fn f_prime(&self, v: f64) -> f64 {
        match self {
            RatioSpec::Sharpe => 0.5 / v.sqrt(),
            RatioSpec::Fano => 1.0,
            RatioSpec::Power(p) => p * v.powf(p - 1.0),
            RatioSpec::Exp(xi) => xi * (xi * v).exp(),
            RatioSpec::Custom(c) => (c.f_prime)(v),
        }
    }

    /// Derivative of [`Self::half_ratio`] in `v`.
    fn half_ratio_prime(&self, v: f64) -> f64 {
        match self {
            RatioSpec::Sharpe => 1.0,
            RatioSpec::Fano => 0.5,
            RatioSpec::Power(p) => 0.5 / p,
            RatioSpec::Exp(_) => 0.0,
            RatioSpec::Custom(_) => {
                let h = 1e-6 * v;
                (self.half_ratio(v + h) - self.half_ratio(v - h)) / (2.0 * h)
            }
        }
    }

    /// `f / (2 f')`.
    fn half_ratio(&self, v: f64) -> f64 {
        match self {
            RatioSpec::Sharpe => v,
            RatioSpec::Fano => 0.5 * v,
            RatioSpec::Power(p) => v / (2.0 * p),
            RatioSpec::Exp(xi) => 0.5 / xi,
            RatioSpec::Custom(_) => self.f(v) / (2.0 * self.f_prime(v)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarInvariants {
    pub alpha2: f64,
    pub beta2: f64,
    pub gamma: f64,
}

impl ScalarInvariants {
    pub fn alpha(&self) -> f64 {
        self.alpha2.sqrt()
    }

    pub fn beta(&self) -> f64 {
        self.beta2.sqrt()
    }

    /// `alpha beta + gamma`; positive unless `E` is a negative multiple of `nu`.
    pub fn lambda(&self) -> f64 {
        self.alpha() * self.beta() + self.gamma
    }

    /// `alpha^2 beta^2 - gamma^2 >= 0`.
    pub fn discriminant(&self) -> f64 {
        self.alpha2 * self.beta2 - self.gamma * self.gamma
    }
}

/// The scalars together with the two solved vectors they come from.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub inv: ScalarInvariants,
    pub cinv_e: DVector<f64>,
    pub cinv_nu: DVector<f64>,
}

impl Prepared {
    pub fn weights(&self, a: f64, b: f64) -> DVector<f64> {
        &self.cinv_e * a + &self.cinv_nu * b
    }
}

pub(crate) fn prepare(model: &dyn RiskModel, e: &DVector<f64>) -> Result<Prepared> {
    linalg::check_len(e, model.dim())?;
    linalg::check_finite(e, "expected returns")?;
    if e.iter().all(|x| *x == 0.0) {
        return Err(Error::invalid("expected returns are identically zero"));
    }
    let nu = DVector::from_element(e.len(), 1.0);
    let cinv_e = model.solve(e)?;
    let cinv_nu = model.solve(&nu)?;
    let alpha2 = e.dot(&cinv_e);
    let beta2 = nu.dot(&cinv_nu);
    let gamma = e.dot(&cinv_nu);
    if !(alpha2 > 0.0 && beta2 > 0.0) || gamma * gamma > alpha2 * beta2 * (1.0 + 1e-9) {
        let condition = model.to_dense().map(|c| linalg::condition_estimate(&c)).unwrap_or(f64::NAN);
        return Err(Error::Numerical {
            message: format!(
                "covariance is numerically not positive-definite (alpha^2 = {alpha2:e}, beta^2 = {beta2:e}, gamma = {gamma:e})"
            ),
            condition,
        });
    }
    Ok(Prepared { inv: ScalarInvariants { alpha2, beta2, gamma }, cinv_e, cinv_nu })
}

pub fn scalar_invariants(model: &dyn RiskModel, e: &DVector<f64>) -> Result<ScalarInvariants> {
    Ok(prepare(model, e)?.inv)
}

/// A candidate variance from the stationarity equation.
#[derive(Debug, Clone, Serialize)]
pub struct RootRecord {
    pub v: f64,
    /// Achieved ratio `G`, when the root is admissible.
    pub g: Option<f64>,
    pub selected: bool,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizerSolution {
    pub spec: String,
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub weights: DVector<f64>,
    pub a: f64,
    pub b: f64,
    pub e_port: f64,
    pub v_port: f64,
    pub sharpe: f64,
    pub fano: f64,
    pub objective: f64,
    /// Lagrange multiplier of the budget constraint, implied numerically.
    pub mu: f64,
    pub invariants: ScalarInvariants,
    /// `E` proportional to `nu`; weights fall back to `C^{-1} nu / beta^2`.
    pub colinear: bool,
    pub roots: Vec<RootRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PortfolioMetrics {
    pub e: f64,
    pub v: f64,
    pub sharpe: f64,
    pub fano: f64,
    pub kappa: f64,
    /// `kappa < 1`: poor long-run investment under log-normal dynamics.
    pub bubble: bool,
}

pub fn evaluate_portfolio(w: &DVector<f64>, model: &dyn RiskModel, e: &DVector<f64>) -> Result<PortfolioMetrics> {
    linalg::check_len(w, model.dim())?;
    linalg::check_len(e, model.dim())?;
    let ev = w.dot(e);
    let v = w.dot(&model.apply(w));
    if !(v > 0.0) {
        return Err(Error::UndefinedRatio(format!("portfolio variance is {v}")));
    }
    let fano = ev / v;
    Ok(PortfolioMetrics { e: ev, v, sharpe: ev / v.sqrt(), fano, kappa: 2.0 * fano, bubble: 2.0 * fano < 1.0 })
}

/// Gradient of `G` at `w`, the implied multiplier `mu = -mean(grad)` and the
/// stationarity residual `max_i |grad_i + mu|`.
pub fn stationarity(
    w: &DVector<f64>,
    model: &dyn RiskModel,
    e: &DVector<f64>,
    spec: &RatioSpec,
) -> (DVector<f64>, f64, f64) {
    let cw = model.apply(w);
    let ev = w.dot(e);
    let v = w.dot(&cw);
    let (f, fp) = (spec.f(v), spec.f_prime(v));
    let grad = e / f - cw * (2.0 * ev * fp / (f * f));
    let mu = -grad.mean();
    let resid = grad.iter().map(|g| (g + mu).abs()).fold(0.0, f64::max);
    (grad, mu, resid)
}

fn finish(
    prep: &Prepared,
    model: &dyn RiskModel,
    e: &DVector<f64>,
    spec: &RatioSpec,
    a: f64,
    b: f64,
    colinear: bool,
    roots: Vec<RootRecord>,
) -> Result<OptimizerSolution> {
    let weights = prep.weights(a, b);
    let m = evaluate_portfolio(&weights, model, e)?;
    let (_, mu, _) = stationarity(&weights, model, e, spec);
    Ok(OptimizerSolution {
        spec: spec.to_string(),
        weights,
        a,
        b,
        e_port: m.e,
        v_port: m.v,
        sharpe: m.sharpe,
        fano: m.fano,
        objective: m.e / spec.f(m.v),
        mu,
        invariants: prep.inv,
        colinear,
        roots,
    })
}

fn is_colinear(inv: &ScalarInvariants) -> bool {
    inv.discriminant() <= 1e-12 * inv.alpha2 * inv.beta2
}

/// `w = C^{-1} E / gamma`. With `gamma < 0` the reported Sharpe ratio is `-alpha`.
pub fn maximize_sharpe(model: &dyn RiskModel, e: &DVector<f64>) -> Result<OptimizerSolution> {
    let prep = prepare(model, e)?;
    sharpe_from(&prep, model, e)
}

pub(crate) fn sharpe_from(prep: &Prepared, model: &dyn RiskModel, e: &DVector<f64>) -> Result<OptimizerSolution> {
    let inv = prep.inv;
    if inv.gamma.abs() <= 1e-14 * inv.alpha() * inv.beta() {
        return Err(Error::Degenerate(
            "gamma = 0: expected returns are orthogonal to the market; Sharpe weights cannot sum to 1".into(),
        ));
    }
    finish(prep, model, e, &RatioSpec::Sharpe, 1.0 / inv.gamma, 0.0, is_colinear(&inv), Vec::new())
}

/// Closed-form Fano maximizer: `a = 1/(alpha beta + gamma)`,
/// `b = alpha / (beta (alpha beta + gamma))`.
pub fn maximize_fano(model: &dyn RiskModel, e: &DVector<f64>) -> Result<OptimizerSolution> {
    let prep = prepare(model, e)?;
    fano_from(&prep, model, e)
}

pub(crate) fn fano_from(prep: &Prepared, model: &dyn RiskModel, e: &DVector<f64>) -> Result<OptimizerSolution> {
    let inv = prep.inv;
    let lambda = inv.lambda();
    if lambda <= 1e-12 * inv.alpha() * inv.beta() {
        return Err(Error::Infeasible(format!(
            "alpha beta + gamma = {lambda:e} <= 0: no portfolio with positive expected return"
        )));
    }
    let a = 1.0 / lambda;
    let b = inv.alpha() / (inv.beta() * lambda);
    finish(prep, model, e, &RatioSpec::Fano, a, b, is_colinear(&inv), Vec::new())
}

/// General `f(V)`. Solves the stationarity equation for `V`, then takes the
/// positive `a` and `b = V - f/(2 f')`.
pub fn maximize_general(model: &dyn RiskModel, e: &DVector<f64>, spec: &RatioSpec) -> Result<OptimizerSolution> {
    spec.validate()?;
    let prep = prepare(model, e)?;
    general_from(&prep, model, e, spec)
}

struct RelTol;

impl Convergency<f64> for RelTol {
    fn is_root_found(&mut self, y: f64) -> bool {
        y == 0.0
    }
    fn is_converged(&mut self, x1: f64, x2: f64) -> bool {
        (x1 - x2).abs() <= 1e-15 * x1.abs().max(x2.abs())
    }
    fn is_iteration_limit_reached(&mut self, iter: usize) -> bool {
        iter >= 500
    }
}

pub(crate) fn general_from(
    prep: &Prepared,
    model: &dyn RiskModel,
    e: &DVector<f64>,
    spec: &RatioSpec,
) -> Result<OptimizerSolution> {
    let inv = prep.inv;
    if inv.lambda() <= 1e-12 * inv.alpha() * inv.beta() {
        return Err(Error::Infeasible("alpha beta + gamma <= 0: all expected returns adverse".into()));
    }
    if is_colinear(&inv) {
        return finish(prep, model, e, spec, 0.0, 1.0 / inv.beta2, true, Vec::new());
    }
    let (b2, g, d) = (inv.beta2, inv.gamma, inv.discriminant());
    let v_lo = 1.0 / b2;
    let a_of = |v: f64| ((v * b2 - 1.0).max(0.0) / d).sqrt();
    let lhs = |v: f64| 1.0 + b2 * (spec.half_ratio(v) - v);
    let resid = |v: f64| lhs(v) - g * a_of(v);
    let v_of = |a: f64| (1.0 + a * a * d) / b2;
    let phi = |a: f64| lhs(v_of(a)) - g * a;
    let dphi = |a: f64| 2.0 * a * d * (spec.half_ratio_prime(v_of(a)) - 1.0) - g;

    let candidates: Vec<f64> = match spec {
        RatioSpec::Sharpe => quadratic_candidates(0.0, d, b2, g),
        RatioSpec::Fano => quadratic_candidates(b2 * (0.5 - 1.0), d, b2, g),
        RatioSpec::Power(p) => quadratic_candidates(b2 * (0.5 / p - 1.0), d, b2, g),
        RatioSpec::Exp(xi) => {
            let k = 1.0 + b2 / (2.0 * xi);
            let c = g * g / d;
            roots_vec(find_roots_quadratic(b2 * b2, -(2.0 * k * b2 + c * b2), k * k + c))
        }
        RatioSpec::Custom(_) => scan_roots(&resid, v_lo, 1e6 * v_lo)?,
    };

    let mut records = Vec::new();
    let mut best: Option<(f64, f64, f64, usize)> = None;
    for v0 in candidates {
        if !v0.is_finite() || v0 < v_lo * (1.0 - 1e-12) {
            records.push(RootRecord { v: v0, g: None, selected: false, note: "below minimum variance".into() });
            continue;
        }
        // polished in a, where the residual is smooth even at v = 1/beta^2
        let a = polish(&phi, &dphi, a_of(v0.max(v_lo)));
        let v = v_of(a);
        // squaring admits the branch with a < 0; keep a >= 0 only
        if a < 0.0 {
            records.push(RootRecord { v, g: None, selected: false, note: "negative-a branch".into() });
            continue;
        }
        let scale = 1.0 + b2 * v + (b2 * spec.half_ratio(v)).abs() + (g * a).abs();
        if phi(a).abs() > 1e-12 * scale {
            records.push(RootRecord { v, g: None, selected: false, note: "not a root after polishing".into() });
            continue;
        }
        // from the budget, so that sum w = 1 holds to rounding
        let b = (1.0 - a * g) / b2;
        let ev = a * inv.alpha2 + b * g;
        let gval = ev / spec.f(v);
        records.push(RootRecord { v, g: Some(gval), selected: false, note: String::new() });
        if best.is_none_or(|(_, _, gb, _)| gval > gb) {
            best = Some((a, b, gval, records.len() - 1));
        }
    }
    let Some((a, b, _, idx)) = best else {
        return Err(Error::Solver(format!(
            "{spec}: no admissible root of the variance equation in [{v_lo:e}, {:e}]; candidates {:?}",
            1e6 * v_lo,
            records.iter().map(|r| r.v).collect::<Vec<_>>()
        )));
    };
    records[idx].selected = true;
    let sol = finish(prep, model, e, spec, a, b, false, records)?;
    let budget = sol.weights.sum();
    // a gamma + b beta^2 = 1 cancels two large terms near the colinear limit
    let terms = (a * g).abs() + (b * b2).abs();
    if (budget - 1.0).abs() > 1e-8_f64.max(1e-12 * terms) {
        return Err(Error::Solver(format!("{spec}: weights sum to {budget} after root solve")));
    }
    Ok(sol)
}

/// Roots of `c^2 V^2 + (2c - gamma^2 beta^2 / D) V + (1 + gamma^2 / D) = 0`,
/// the squared stationarity equation when `f / (2 f') = V / (2p)`.
fn quadratic_candidates(c: f64, d: f64, b2: f64, g: f64) -> Vec<f64> {
    let r = g * g / d;
    roots_vec(find_roots_quadratic(c * c, 2.0 * c - r * b2, 1.0 + r))
}

fn roots_vec(r: Roots<f64>) -> Vec<f64> {
    r.as_ref().to_vec()
}

/// Newton on the unsquared residual in `a`, each step kept only if it
/// reduces `|phi|`.
fn polish(phi: &dyn Fn(f64) -> f64, dphi: &dyn Fn(f64) -> f64, a0: f64) -> f64 {
    let mut a = a0;
    let mut r = phi(a);
    for _ in 0..8 {
        let slope = dphi(a);
        if r == 0.0 || !(slope.is_finite() && slope != 0.0) {
            break;
        }
        let next = a - r / slope;
        let rn = phi(next);
        if rn.abs() < r.abs() {
            a = next;
            r = rn;
        } else {
            break;
        }
    }
    a
}

/// All sign changes of `resid` on a geometric grid, each refined by Brent.
fn scan_roots(resid: &dyn Fn(f64) -> f64, v_lo: f64, v_hi: f64) -> Result<Vec<f64>> {
    const STEPS: usize = 600;
    let ratio = (v_hi / v_lo).powf(1.0 / STEPS as f64);
    let mut out = Vec::new();
    let mut x0 = v_lo;
    let mut y0 = resid(x0);
    for _ in 0..STEPS {
        let x1 = x0 * ratio;
        let y1 = resid(x1);
        if y1 == 0.0 {
            out.push(x1);
        } else if y0 * y1 < 0.0 {
            let root = find_root_brent(x0, x1, resid, &mut RelTol)
                .map_err(|err| Error::Solver(format!("Brent refinement failed in [{x0:e}, {x1:e}]: {err}")))?;
            out.push(root);
        }
        x0 = x1;
        y0 = y1;
    }
    if out.is_empty() {
        return Err(Error::Solver(format!(
            "no sign change of the variance equation in [{v_lo:e}, {v_hi:e}]"
        )));
    }
    Ok(out)
}
