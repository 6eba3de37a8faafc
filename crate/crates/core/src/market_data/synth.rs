//! Deterministic synthetic panels with a market mode, K style factors and
//! idiosyncratic noise. Each day is split into an overnight and an intraday
//! leg so open-to-close strategies have something to trade on.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ReturnsPanel;
use crate::error::{Error, Result};

/// Generator settings. Read from a plain `key = value` file; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub t: usize,
    pub k_factors: usize,
    /// Fraction of each instrument's variance carried by the market mode.
    pub market_rho: f64,
    /// Fraction of variance carried by the K style factors (ignored for K = 0).
    pub factor_rho: f64,
    /// Location and scale of ln(sigma_i), sigma_i being the daily volatility.
    pub sigma_lognormal_mu: f64,
    pub sigma_lognormal_sd: f64,
    /// Location and scale of ln(mean daily dollar volume).
    pub volume_lognormal_mu: f64,
    pub volume_lognormal_sd: f64,
    /// Day-to-day log-normal noise on dollar volume.
    pub volume_daily_sd: f64,
    pub price_lognormal_mu: f64,
    pub price_lognormal_sd: f64,
    /// Share of daily variance realized between the open and the close.
    pub intraday_share: f64,
    /// Intraday reversal of the previous close-to-close return.
    pub reversal: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n: 100,
            t: 252,
            k_factors: 0,
            market_rho: 0.25,
            factor_rho: 0.15,
            // median 0.0137, mean 0.0185
            sigma_lognormal_mu: 0.0137f64.ln(),
            sigma_lognormal_sd: (2.0 * (0.0185f64 / 0.0137).ln()).sqrt(),
            volume_lognormal_mu: 2.0e7f64.ln(),
            volume_lognormal_sd: 1.0,
            volume_daily_sd: 0.3,
            price_lognormal_mu: 50.0f64.ln(),
            price_lognormal_sd: 0.5,
            intraday_share: 0.5,
            reversal: 0.1,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    fn effective_factor_rho(&self) -> f64 {
        if self.k_factors == 0 {
            0.0
        } else {
            self.factor_rho
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::invalid("generator needs n >= 1 and t >= 1"));
        }
        let finite = [
            self.market_rho,
            self.factor_rho,
            self.sigma_lognormal_mu,
            self.sigma_lognormal_sd,
            self.volume_lognormal_mu,
            self.volume_lognormal_sd,
            self.volume_daily_sd,
            self.price_lognormal_mu,
            self.price_lognormal_sd,
            self.intraday_share,
            self.reversal,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("generator parameters must be finite"));
        }
        for (name, sd) in [
            ("sigma_lognormal_sd", self.sigma_lognormal_sd),
            ("volume_lognormal_sd", self.volume_lognormal_sd),
            ("volume_daily_sd", self.volume_daily_sd),
            ("price_lognormal_sd", self.price_lognormal_sd),
        ] {
            if sd < 0.0 {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {sd}")));
            }
        }
        if !(0.0..=1.0).contains(&self.market_rho) || !(0.0..=1.0).contains(&self.factor_rho) {
            return Err(Error::invalid("market_rho and factor_rho must lie in [0, 1]"));
        }
        if self.market_rho + self.effective_factor_rho() > 1.0 + 1e-12 {
            return Err(Error::invalid(
                "market_rho + factor_rho exceeds 1 (negative idiosyncratic variance)",
            ));
        }
        if !(0.0..=1.0).contains(&self.intraday_share) {
            return Err(Error::invalid("intraday_share must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Builds a panel from the configuration. Bit-identical for equal configs.
pub fn synthesize_panel(cfg: &GeneratorConfig) -> Result<ReturnsPanel> {
    cfg.validate()?;
    let (n, t, k) = (cfg.n, cfg.t, cfg.k_factors);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let sigma: Vec<f64> = (0..n)
        .map(|_| (cfg.sigma_lognormal_mu + cfg.sigma_lognormal_sd * normal(&mut rng)).exp())
        .collect();
    let mut loadings = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        for a in 0..k {
            loadings[(i, a)] = normal(&mut rng);
        }
        let norm = loadings.row(i).norm();
        if norm > 0.0 {
            loadings.row_mut(i).scale_mut(1.0 / norm);
        }
    }
    let volume_base: Vec<f64> = (0..n)
        .map(|_| (cfg.volume_lognormal_mu + cfg.volume_lognormal_sd * normal(&mut rng)).exp())
        .collect();
    let mut close: Vec<f64> = (0..n)
        .map(|_| (cfg.price_lognormal_mu + cfg.price_lognormal_sd * normal(&mut rng)).exp())
        .collect();

    let rho_m = cfg.market_rho;
    let rho_f = cfg.effective_factor_rho();
    let rho_e = (1.0 - rho_m - rho_f).max(0.0);
    let legs = [(1.0 - cfg.intraday_share).sqrt(), cfg.intraday_share.sqrt()];

    let mut returns = DMatrix::zeros(n, t);
    let mut intraday = DMatrix::zeros(n, t);
    let mut volumes = DMatrix::zeros(n, t);
    let mut opens = DMatrix::zeros(n, t);
    let mut prev = vec![0.0; n];
    let mut leg_returns = [vec![0.0; n], vec![0.0; n]];

    // generate oldest first; column 0 is the most recent date
    for step in 0..t {
        let col = t - 1 - step;
        for (leg, scale) in legs.iter().enumerate() {
            let market = normal(&mut rng);
            let factors = DVector::from_iterator(k, (0..k).map(|_| normal(&mut rng)));
            for i in 0..n {
                let style = if k > 0 { loadings.row(i).transpose().dot(&factors) } else { 0.0 };
                let z = rho_m.sqrt() * market + rho_f.sqrt() * style + rho_e.sqrt() * normal(&mut rng);
                leg_returns[leg][i] = scale * sigma[i] * z;
            }
        }
        for i in 0..n {
            let overnight = leg_returns[0][i].max(-0.95);
            let day = (leg_returns[1][i] - cfg.reversal * prev[i]).max(-0.95);
            let r = (1.0 + overnight) * (1.0 + day) - 1.0;
            let open = close[i] * (1.0 + overnight);
            close[i] = open * (1.0 + day);
            // high-volatility names drift toward zero; a 1:10 reverse split
            // keeps share counts meaningful without touching returns
            while close[i] < 1.0 {
                close[i] *= 10.0;
            }
            returns[(i, col)] = r;
            intraday[(i, col)] = day;
            opens[(i, col)] = open;
            let noise = cfg.volume_daily_sd;
            volumes[(i, col)] = volume_base[i] * (noise * normal(&mut rng) - 0.5 * noise * noise).exp();
            prev[i] = r;
        }
    }

    let width = (n.max(2) - 1).to_string().len();
    let tickers = (0..n).map(|i| format!("SYN{i:0width$}")).collect();
    let dates = (0..t).map(|c| format!("t-{c}")).collect();
    Ok(ReturnsPanel::new(tickers, dates, returns, volumes)?
        .with_intraday(intraday, Some(opens))?
        .mark_synthetic())
}
