//! Intraday backtests: positions are set at the open, liquidated at the
//! close of the same day, and charged linear costs on both legs.
//!
//! Dates are processed oldest first. On the date in panel column `c` a
//! strategy only sees columns `c + 1 ..`, through a [`HistoryView`].

use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::costs::{calibrate_from_slices, effective_values, CostModel};
use crate::error::{Error, Result};
use crate::long_short::{apply_position_bounds, constrained_inverse, normalize_l1, IteratedReturns, PositionBounds};
use crate::market_data::{sample_sd, ReturnsPanel};
use crate::risk::{build_statistical_model_from_returns, ConstraintSet, RiskModel, StatisticalOptions};

pub const TRADING_DAYS: f64 = 252.0;

/// Read-only access to the part of a panel strictly before one date.
#[derive(Debug, Clone, Copy)]
pub struct HistoryView<'a> {
    panel: &'a ReturnsPanel,
    date: usize,
}

impl<'a> HistoryView<'a> {
    pub fn new(panel: &'a ReturnsPanel, date: usize) -> Self {
        Self { panel, date }
    }

    /// Panel column of the trading date.
    pub fn date(&self) -> usize {
        self.date
    }

    pub fn n(&self) -> usize {
        self.panel.n()
    }

    /// Number of columns before the date.
    pub fn available(&self) -> usize {
        self.panel.t() - self.date - 1
    }

    fn check(&self, start: usize, len: usize) -> Result<()> {
        if start <= self.date {
            return Err(Error::Lookahead { date: self.date, requested: start });
        }
        if start + len > self.panel.t() {
            return Err(Error::Range(format!(
                "history columns {start}..{} beyond panel length {}",
                start + len,
                self.panel.t()
            )));
        }
        Ok(())
    }

    /// Close-to-close returns in columns `start .. start + len`; `start` must
    /// lie strictly before the date.
    pub fn returns(&self, start: usize, len: usize) -> Result<DMatrix<f64>> {
        self.check(start, len)?;
        Ok(self.panel.returns().columns(start, len).into_owned())
    }

    pub fn volumes(&self, start: usize, len: usize) -> Result<DMatrix<f64>> {
        self.check(start, len)?;
        Ok(self.panel.volumes().columns(start, len).into_owned())
    }

    /// The `days` most recent returns before the date, newest first.
    pub fn recent_returns(&self, days: usize) -> Result<DMatrix<f64>> {
        self.returns(self.date + 1, days)
    }

    pub fn recent_volumes(&self, days: usize) -> Result<DMatrix<f64>> {
        self.volumes(self.date + 1, days)
    }

    /// Average daily dollar volume over the `days` most recent columns.
    pub fn addv(&self, days: usize) -> Result<DVector<f64>> {
        Ok(self.recent_volumes(days)?.column_sum() / days as f64)
    }
}

/// What a strategy hands to the backtest for one date.
#[derive(Debug, Clone)]
pub enum Allocation {
    /// Final weights; position bounds are enforced by truncation.
    Weights(DVector<f64>),
    /// Effective returns for the bounded optimizer, which runs with the
    /// date's trading bounds.
    Optimized { e_hat: DVector<f64>, model: Arc<dyn RiskModel>, constraints: Option<ConstraintSet> },
}

pub trait Strategy {
    fn name(&self) -> String;

    /// Columns of history the strategy needs before its first date.
    fn lookback(&self) -> usize;

    fn allocate(&mut self, view: &HistoryView<'_>, costs: &CostModel) -> Result<Allocation>;
}

/// Strategy built from a closure, mostly for tests.
pub struct FnStrategy<F> {
    pub name: String,
    pub lookback: usize,
    pub f: F,
}

impl<F> Strategy for FnStrategy<F>
where
    F: FnMut(&HistoryView<'_>, &CostModel) -> Result<Allocation>,
{
    fn name(&self) -> String {
        self.name.clone()
    }

    fn lookback(&self) -> usize {
        self.lookback
    }

    fn allocate(&mut self, view: &HistoryView<'_>, costs: &CostModel) -> Result<Allocation> {
        (self.f)(view, costs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanReversionConfig {
    pub n_opt: usize,
    pub b_hat: f64,
    /// Days of history behind the statistical risk model.
    pub risk_window: usize,
    /// The risk model is rebuilt every `refresh` dates.
    pub refresh: usize,
    pub dollar_neutral: bool,
    pub remove_market_mode: bool,
    /// Shrink expected returns by the cost per dollar before optimizing.
    pub cost_adjusted: bool,
    /// Expected fraction of the previous-day return that reverts:
    /// `E_i = -reversion R_i`.
    pub reversion: f64,
}

impl Default for MeanReversionConfig {
    fn default() -> Self {
        Self {
            n_opt: 1,
            b_hat: 1.0,
            risk_window: 252,
            refresh: 21,
            dollar_neutral: true,
            remove_market_mode: false,
            cost_adjusted: true,
            reversion: 1.0,
        }
    }
}

/// `E_i = -R_i` of the previous day, passed through the multiply-optimized
/// series on a statistical risk model.
pub struct MeanReversion {
    cfg: MeanReversionConfig,
    model: Option<Arc<dyn RiskModel>>,
    since_refresh: usize,
}

impl MeanReversion {
    pub fn new(cfg: MeanReversionConfig) -> Result<Self> {
        if cfg.n_opt == 0 || cfg.refresh == 0 || cfg.risk_window < 2 || !cfg.b_hat.is_finite() {
            return Err(Error::invalid("mean-reversion config needs n_opt, refresh >= 1 and risk_window >= 2"));
        }
        if !(cfg.reversion.is_finite() && cfg.reversion > 0.0) {
            return Err(Error::invalid("reversion must be positive"));
        }
        Ok(Self { cfg, model: None, since_refresh: 0 })
    }
}

impl Strategy for MeanReversion {
    fn name(&self) -> String {
        format!("mean-reversion n_opt={} b_hat={}", self.cfg.n_opt, self.cfg.b_hat)
    }

    fn lookback(&self) -> usize {
        self.cfg.risk_window
    }

    fn allocate(&mut self, view: &HistoryView<'_>, costs: &CostModel) -> Result<Allocation> {
        if self.model.is_none() || self.since_refresh >= self.cfg.refresh {
            let window = view.recent_returns(self.cfg.risk_window)?;
            let opts = StatisticalOptions { remove_market_mode: self.cfg.remove_market_mode, ..Default::default() };
            let m = build_statistical_model_from_returns(&window, &opts)?;
            self.model = Some(Arc::new(m.into_factor_model()));
            self.since_refresh = 0;
        }
        self.since_refresh += 1;
        let model = self.model.clone().expect("model built above");

        let e = -view.recent_returns(1)?.column(0) * self.cfg.reversion;
        let e = if self.cfg.cost_adjusted { effective_values(&e, costs)? } else { e };
        let n = e.len();
        if e.iter().all(|x| *x == 0.0) {
            return Ok(Allocation::Weights(DVector::zeros(n)));
        }
        let e_hat = if self.cfg.n_opt == 1 {
            e
        } else {
            IteratedReturns::compute(model.as_ref(), &e, self.cfg.n_opt)?.combined(self.cfg.b_hat)
        };
        let constraints = self.cfg.dollar_neutral.then(|| ConstraintSet::dollar_neutral(n));
        Ok(Allocation::Optimized { e_hat, model, constraints })
    }
}

/// Where the per-date cost model comes from.
#[derive(Debug, Clone)]
pub enum CostSource {
    Fixed(CostModel),
    /// Recalibrated every date from the trailing `window` days of returns and
    /// dollar volumes.
    Calibrated { window: usize },
}

#[derive(Debug, Clone)]
pub struct BacktestOptions {
    /// Total absolute dollar holdings `I`.
    pub investment: f64,
    /// `|H_i| <= bounds_fraction * A_i`.
    pub bounds_fraction: f64,
    /// Window of the ADDV `A_i` behind the trading bounds.
    pub addv_window: usize,
    /// Keep the per-date dollar holdings in the report.
    pub record_positions: bool,
    /// Cap on the number of dates, counted back from the most recent one.
    pub max_days: Option<usize>,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self { investment: 20e6, bounds_fraction: 0.01, addv_window: 21, record_positions: false, max_days: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DailyRecord {
    pub date: String,
    pub gross_pnl: f64,
    pub cost: f64,
    pub pnl: f64,
    /// `sum |H_i|`.
    pub gross_exposure: f64,
    /// `sum H_i`.
    pub net_exposure: f64,
    pub shares: f64,
    /// Largest `|H_i| - bounds_fraction A_i`, in dollars.
    pub bound_excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BacktestReport {
    pub strategy: String,
    pub investment: f64,
    pub bounds_fraction: f64,
    pub days: usize,
    pub first_date: String,
    pub last_date: String,
    pub daily: Vec<DailyRecord>,
    /// Annualized return on capital.
    pub roc: f64,
    /// Annualized Sharpe ratio of daily P&L; NaN when undefined.
    pub sr: f64,
    pub sr_defined: bool,
    /// Cents per share traded, counting both legs; absent without prices.
    pub cps: Option<f64>,
    pub total_shares: f64,
    pub total_pnl: f64,
    pub synthetic: bool,
    /// Dates on which the bounded optimizer failed and plain truncation was used.
    pub bound_fallbacks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<Vec<f64>>>,
}

impl BacktestReport {
    pub fn daily_pnl(&self) -> Vec<f64> {
        self.daily.iter().map(|d| d.pnl).collect()
    }
}

/// Annualized Sharpe ratio `mean / sd * sqrt(252)`; `None` when the sample
/// standard deviation vanishes or fewer than two days are present.
pub fn annualized_sharpe(pnl: &[f64]) -> Option<f64> {
    if pnl.len() < 2 {
        return None;
    }
    let sd = sample_sd(pnl);
    if !(sd > 0.0) {
        return None;
    }
    let mean = pnl.iter().sum::<f64>() / pnl.len() as f64;
    Some(mean / sd * TRADING_DAYS.sqrt())
}

pub fn run_intraday_backtest(
    panel: &ReturnsPanel,
    strategy: &mut dyn Strategy,
    costs: &CostSource,
    opts: &BacktestOptions,
) -> Result<BacktestReport> {
    let n = panel.n();
    let t = panel.t();
    if !(opts.investment.is_finite() && opts.investment > 0.0) {
        return Err(Error::invalid("investment must be positive"));
    }
    if !(opts.bounds_fraction.is_finite() && opts.bounds_fraction > 0.0) {
        return Err(Error::invalid("bounds fraction must be positive"));
    }
    if opts.addv_window == 0 {
        return Err(Error::invalid("ADDV window must be positive"));
    }
    let cost_window = match costs {
        CostSource::Fixed(c) => {
            if c.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: c.len() });
            }
            0
        }
        CostSource::Calibrated { window } if *window < 2 => {
            return Err(Error::invalid("cost calibration window must be at least 2"));
        }
        CostSource::Calibrated { window } => *window,
    };
    let lookback = strategy.lookback().max(opts.addv_window).max(cost_window);
    if lookback >= t {
        return Err(Error::Range(format!("panel of {t} dates cannot cover a lookback of {lookback}")));
    }
    let intraday = match panel.intraday() {
        Some(m) => m,
        None => {
            warn!("panel has no open-to-close returns; using close-to-close returns");
            panel.returns()
        }
    };
    let prices = panel.open_prices();

    let mut first = t - 1 - lookback;
    if let Some(cap) = opts.max_days {
        first = first.min(cap.saturating_sub(1));
    }
    let inv = opts.investment;
    let mut daily = Vec::with_capacity(first + 1);
    let mut positions = opts.record_positions.then(Vec::new);
    let mut fallbacks = 0;
    let mut total_shares = 0.0;

    for col in (0..=first).rev() {
        let view = HistoryView::new(panel, col);
        let addv = view.addv(opts.addv_window)?;
        let cost_model = match costs {
            CostSource::Fixed(c) => c.clone(),
            CostSource::Calibrated { window } => calibrated_costs(&view, *window)?,
        };
        let caps = addv.map(|a| opts.bounds_fraction * a);
        let holdings = match strategy.allocate(&view, &cost_model)? {
            Allocation::Weights(w) => {
                crate::linalg::check_len(&w, n)?;
                DVector::from_fn(n, |i, _| (inv * w[i]).clamp(-caps[i], caps[i]))
            }
            Allocation::Optimized { e_hat, model, constraints } => {
                crate::linalg::check_len(&e_hat, n)?;
                // an instrument without volume cannot trade; a positive cap of
                // the smallest magnitude keeps the bounds straddling zero
                let wcap = caps.map(|c| (c / inv).max(f64::MIN_POSITIVE));
                let bounds = PositionBounds::symmetric(wcap)?;
                match apply_position_bounds(&e_hat, model.as_ref(), &bounds, constraints.as_ref()) {
                    Ok(sol) => sol.weights * inv,
                    Err(err) if err.is_numerical() => {
                        warn!("date {}: bounded optimizer failed ({err}); truncating", panel.dates()[col]);
                        fallbacks += 1;
                        let raw = constrained_inverse(model.as_ref(), constraints.as_ref(), &e_hat)?;
                        match normalize_l1(&raw) {
                            Ok((w, _)) => DVector::from_fn(n, |i, _| (inv * w[i]).clamp(-caps[i], caps[i])),
                            Err(_) => DVector::zeros(n),
                        }
                    }
                    Err(err) => return Err(err),
                }
            }
        };
        let r = intraday.column(col);
        let gross: f64 = holdings.iter().zip(r.iter()).map(|(h, x)| h * x).sum();
        let cost = 2.0 * cost_model.cost(&holdings);
        let shares = match prices {
            Some(p) => holdings.iter().zip(p.column(col).iter()).map(|(h, px)| 2.0 * h.abs() / px).sum(),
            None => 0.0,
        };
        total_shares += shares;
        let bound_excess = (0..n).map(|i| holdings[i].abs() - caps[i]).fold(f64::NEG_INFINITY, f64::max);
        daily.push(DailyRecord {
            date: panel.dates()[col].clone(),
            gross_pnl: gross,
            cost,
            pnl: gross - cost,
            gross_exposure: crate::linalg::l1_norm(&holdings),
            net_exposure: holdings.sum(),
            shares,
            bound_excess,
        });
        if let Some(p) = positions.as_mut() {
            p.push(holdings.iter().cloned().collect());
        }
    }

    let pnl: Vec<f64> = daily.iter().map(|d| d.pnl).collect();
    let total_pnl: f64 = pnl.iter().sum();
    let days = daily.len();
    let sr = annualized_sharpe(&pnl);
    let cps = (prices.is_some() && total_shares > 0.0).then(|| 100.0 * total_pnl / total_shares);
    Ok(BacktestReport {
        strategy: strategy.name(),
        investment: inv,
        bounds_fraction: opts.bounds_fraction,
        days,
        first_date: daily.first().map(|d| d.date.clone()).unwrap_or_default(),
        last_date: daily.last().map(|d| d.date.clone()).unwrap_or_default(),
        daily,
        roc: total_pnl / inv * TRADING_DAYS / days as f64,
        sr: sr.unwrap_or(f64::NAN),
        sr_defined: sr.is_some(),
        cps,
        total_shares,
        total_pnl,
        synthetic: panel.is_synthetic(),
        bound_fallbacks: fallbacks,
        positions,
    })
}

fn calibrated_costs(view: &HistoryView<'_>, window: usize) -> Result<CostModel> {
    let r = view.recent_returns(window)?;
    let sigma = DVector::from_fn(r.nrows(), |i, _| {
        let row: Vec<f64> = r.row(i).iter().cloned().collect();
        sample_sd(&row)
    });
    calibrate_from_slices(&sigma, &view.addv(window)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n_opt: usize,
    pub roc: f64,
    pub sr: f64,
    pub cps: Option<f64>,
    pub total_pnl: f64,
}

/// One mean-reversion backtest per `n_opt`, everything else held fixed.
pub fn sweep_n_opt(
    panel: &ReturnsPanel,
    base: &MeanReversionConfig,
    n_opts: &[usize],
    costs: &CostSource,
    opts: &BacktestOptions,
) -> Result<Vec<(SweepRow, BacktestReport)>> {
    n_opts
        .iter()
        .map(|&n_opt| {
            let mut s = MeanReversion::new(MeanReversionConfig { n_opt, ..base.clone() })?;
            let report = run_intraday_backtest(panel, &mut s, costs, opts)?;
            let row = SweepRow { n_opt, roc: report.roc, sr: report.sr, cps: report.cps, total_pnl: report.total_pnl };
            Ok((row, report))
        })
        .collect()
}
