//! Long-only (`w_i >= 0`, `sum w_i = 1`) portfolios by iterative relaxation:
//! solve the unbounded problem on the active set, then permanently drop the
//! negative-weight instrument with the lowest per-instrument Fano ratio
//! `E_l / C_ll` until every weight is nonnegative.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::market_data::VolatilityProfile;
use crate::ratio::{self, evaluate_portfolio, PortfolioMetrics, RatioSpec, ScalarInvariants};
use crate::risk::{DenseCovariance, FactorModel, Restricted, RiskModel};

/// Weights this close to zero count as zero.
const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct ActiveSet {
    pub included: Vec<usize>,
    /// `(index, iteration at which it was dropped)`.
    pub excluded: Vec<(usize, usize)>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub active: usize,
    pub invariants: ScalarInvariants,
    pub negative_weights: usize,
    pub dropped: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LongOnlySolution {
    pub method: String,
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub weights: DVector<f64>,
    pub active_set: ActiveSet,
    /// `E_i + alpha(J) / beta(J)` for every instrument, evaluated on the final `J`.
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub effective_returns: DVector<f64>,
    pub scalars: ScalarInvariants,
    pub metrics: PortfolioMetrics,
    pub history: Vec<IterationRecord>,
}

#[derive(Clone, Copy)]
enum Rule<'a> {
    Fano,
    Sharpe,
    General(&'a RatioSpec),
}

pub fn fano_long_only(model: &dyn RiskModel, e: &DVector<f64>) -> Result<LongOnlySolution> {
    relax(model, e, Rule::Fano)
}

/// Same skeleton with the Sharpe direction `C(J)^{-1} E`; instruments with a
/// negative component are candidates for dropping.
pub fn sharpe_long_only(model: &dyn RiskModel, e: &DVector<f64>) -> Result<LongOnlySolution> {
    relax(model, e, Rule::Sharpe)
}

/// Experimental: any `f(V)` with the Fano drop criterion.
pub fn general_long_only(model: &dyn RiskModel, e: &DVector<f64>, spec: &RatioSpec) -> Result<LongOnlySolution> {
    spec.validate()?;
    relax(model, e, Rule::General(spec))
}

fn relax(model: &dyn RiskModel, e: &DVector<f64>, rule: Rule) -> Result<LongOnlySolution> {
    let n = model.dim();
    linalg::check_len(e, n)?;
    let mut active: Vec<usize> = (0..n).collect();
    let mut excluded = Vec::new();
    let mut history = Vec::new();
    let mut iteration = 0;
    loop {
        let view = Restricted::new(model, active.clone())?;
        let e_j = linalg::gather(e, &active);
        let prep = ratio::prepare(&view, &e_j)?;
        let w_j = match rule {
            Rule::Fano => ratio::fano_from(&prep, &view, &e_j)?.weights,
            // the direction only; its sign pattern decides the drop
            Rule::Sharpe => prep.cinv_e.clone(),
            Rule::General(spec) => ratio::general_from(&prep, &view, &e_j, spec)?.weights,
        };
        let negatives: Vec<usize> = (0..active.len()).filter(|&p| w_j[p] < -ZERO_TOL * w_j.amax()).collect();
        let mut record = IterationRecord {
            iteration,
            active: active.len(),
            invariants: prep.inv,
            negative_weights: negatives.len(),
            dropped: None,
        };
        if negatives.is_empty() {
            history.push(record);
            return finish(model, e, rule, active, excluded, iteration, w_j, prep.inv, history);
        }
        let pos = drop_candidate(model, e, &active, &negatives);
        let dropped = active.remove(pos);
        record.dropped = Some(dropped);
        history.push(record);
        excluded.push((dropped, iteration));
        iteration += 1;
        if active.is_empty() {
            return Err(Error::Infeasible("every instrument was dropped; no long-only solution".into()));
        }
    }
}

/// Lowest `E_l / C_ll`; ties go to the largest `C_ll`, then the lowest index.
fn drop_candidate(model: &dyn RiskModel, e: &DVector<f64>, active: &[usize], negatives: &[usize]) -> usize {
    let mut best = negatives[0];
    for &p in &negatives[1..] {
        let (i, b) = (active[p], active[best]);
        let (ci, cb) = (model.entry(i, i), model.entry(b, b));
        let (fi, fb) = (e[i] / ci, e[b] / cb);
        if fi < fb || (fi == fb && ci > cb) || (fi == fb && ci == cb && i < b) {
            best = p;
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn finish(
    model: &dyn RiskModel,
    e: &DVector<f64>,
    rule: Rule,
    mut active: Vec<usize>,
    mut excluded: Vec<(usize, usize)>,
    iteration: usize,
    w_j: DVector<f64>,
    scalars: ScalarInvariants,
    history: Vec<IterationRecord>,
) -> Result<LongOnlySolution> {
    let total: f64 = w_j.sum();
    if !(total > 0.0) {
        return Err(Error::Infeasible("active-set weights do not sum to a positive budget".into()));
    }
    let mut weights = DVector::zeros(model.dim());
    let mut kept = Vec::with_capacity(active.len());
    for (p, &i) in active.iter().enumerate() {
        let w = w_j[p] / total;
        if w.abs() <= ZERO_TOL {
            excluded.push((i, iteration));
        } else {
            weights[i] = w;
            kept.push(i);
        }
    }
    if kept.is_empty() {
        return Err(Error::Infeasible("all weights vanish".into()));
    }
    active = kept;
    let s = weights.sum();
    weights /= s;
    let shift = scalars.alpha() / scalars.beta();
    let effective_returns = e.map(|x| x + shift);
    let metrics = evaluate_portfolio(&weights, model, e)?;
    let method = match rule {
        Rule::Fano => "fano".to_string(),
        Rule::Sharpe => "sharpe".to_string(),
        Rule::General(spec) => spec.to_string(),
    };
    Ok(LongOnlySolution {
        method,
        weights,
        active_set: ActiveSet { included: active, excluded, iterations: iteration },
        effective_returns,
        scalars,
        metrics,
        history,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DiversificationReport {
    pub n: usize,
    pub fano_active: usize,
    pub sharpe_active: usize,
    /// `E_i < 0` but `w_i > 0`.
    pub fano_negative_return_holdings: usize,
    pub sharpe_negative_return_holdings: usize,
    pub fano_more_diversified: bool,
    pub sigma_star: f64,
    pub sigma_tilde_5: f64,
    pub sigma_tilde_10: f64,
    pub count_above_5: usize,
    pub count_above_10: usize,
}

/// `sigma~ = sqrt(N) sigma_* / denominator` and the number of `sigma_i >= sigma~`.
pub fn volatility_threshold(sigma: &VolatilityProfile, denominator: f64) -> (f64, usize) {
    let n = sigma.len() as f64;
    let t = n.sqrt() * sigma.sigma_star() / denominator;
    (t, sigma.sigma.iter().filter(|s| **s >= t).count())
}

pub fn diversification_report(
    fano: &LongOnlySolution,
    sharpe: &LongOnlySolution,
    e: &DVector<f64>,
    sigma: &VolatilityProfile,
) -> Result<DiversificationReport> {
    let n = fano.weights.len();
    if sharpe.weights.len() != n || e.len() != n || sigma.len() != n {
        return Err(Error::invalid("solutions, returns and volatilities must share one universe"));
    }
    let neg_held = |w: &DVector<f64>| (0..n).filter(|&i| e[i] < 0.0 && w[i] > 0.0).count();
    let (t5, c5) = volatility_threshold(sigma, 5.0);
    let (t10, c10) = volatility_threshold(sigma, 10.0);
    Ok(DiversificationReport {
        n,
        fano_active: fano.active_set.included.len(),
        sharpe_active: sharpe.active_set.included.len(),
        fano_negative_return_holdings: neg_held(&fano.weights),
        sharpe_negative_return_holdings: neg_held(&sharpe.weights),
        fano_more_diversified: fano.active_set.included.len() >= sharpe.active_set.included.len(),
        sigma_star: sigma.sigma_star(),
        sigma_tilde_5: t5,
        sigma_tilde_10: t10,
        count_above_5: c5,
        count_above_10: c10,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OneFactorDemo {
    pub n: usize,
    pub rho: f64,
    /// Generic optimizer against the closed form.
    pub max_dev_generic: f64,
    /// Large-N approximation against the closed form.
    pub max_dev_approx: f64,
    #[serde(serialize_with = "crate::serde_util::dvector")]
    pub weights: DVector<f64>,
}

/// One-factor model with `Psi = (1 - rho) I + rho s s^T`, `s_i = +1` for the
/// first half and `-1` for the second. Compares the unbounded Fano weights
/// from the generic optimizer, the closed form and the large-N approximation.
pub fn one_factor_demo(n: usize, rho: f64, seed: u64) -> Result<OneFactorDemo> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid("one-factor demo needs an even n >= 2"));
    }
    if !(rho > -1.0 / (n - 1) as f64 && rho < 1.0) {
        return Err(Error::invalid(format!("rho = {rho} outside the positive-definite range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let sigma = DVector::from_fn(n, |_, _| (0.0137f64.ln() + 0.5 * draw()).exp());
    let et = DVector::from_fn(n, |_, _| 0.05 + 0.1 * draw());
    let e = et.component_mul(&sigma);
    let s = DVector::from_fn(n, |i, _| if i < n / 2 { 1.0 } else { -1.0 });

    let model: Box<dyn RiskModel> = if rho > 0.0 {
        Box::new(FactorModel::new(
            sigma.map(|x| (1.0 - rho) * x * x),
            DMatrix::from_fn(n, 1, |i, _| sigma[i] * s[i]),
            DMatrix::from_element(1, 1, rho),
        )?)
    } else {
        let c = DMatrix::from_fn(n, n, |i, j| {
            let psi = if i == j { 1.0 } else { rho * s[i] * s[j] };
            sigma[i] * sigma[j] * psi
        });
        Box::new(DenseCovariance::new(c)?)
    };
    let generic = ratio::maximize_fano(model.as_ref(), &e)?.weights;

    let nf = n as f64;
    let shrink = rho / (1.0 + (nf - 1.0) * rho);
    let inv_sigma = sigma.map(|x| 1.0 / x);
    let quad = |x: &DVector<f64>, y: &DVector<f64>| (x.dot(y) - shrink * x.dot(&s) * y.dot(&s)) / (1.0 - rho);
    let alpha = quad(&et, &et).sqrt();
    let beta = quad(&inv_sigma, &inv_sigma).sqrt();
    let etp = &et + &inv_sigma * (alpha / beta);
    let sum_s = etp.dot(&s);
    let exact = DVector::from_fn(n, |i, _| (etp[i] - shrink * s[i] * sum_s) / (sigma[i] * (1.0 - rho)));
    let exact = &exact / exact.sum();

    let e_star = (et.norm_squared() / nf).sqrt();
    let sigma_star = (nf / inv_sigma.norm_squared()).sqrt();
    let tail: f64 = (0..n).map(|j| et[j] * s[j] + e_star * sigma_star * s[j] / sigma[j]).sum::<f64>() / nf;
    let approx = DVector::from_fn(n, |i, _| {
        (et[i] + e_star * sigma_star / sigma[i] - s[i] * tail) / (sigma[i] * (1.0 - rho))
    });
    let approx = &approx / approx.sum();

    Ok(OneFactorDemo {
        n,
        rho,
        max_dev_generic: linalg::max_relative_diff(&generic, &exact),
        max_dev_approx: linalg::max_relative_diff(&approx, &exact),
        weights: exact,
    })
}
