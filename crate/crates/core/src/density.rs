//! Gaussian kernel density estimates of the volatility cross-section,
//! emitted as plot-ready `(x, density)` pairs.

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market_data::VolatilityProfile;

#[derive(Debug, Clone, Serialize)]
pub struct DensityEstimate {
    pub x: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub samples: usize,
    /// Set when the sample has no spread and the bandwidth is a fallback.
    pub degenerate: bool,
}

impl DensityEstimate {
    /// Grid point with the largest estimated density.
    pub fn mode(&self) -> f64 {
        let mut best = 0;
        for i in 1..self.density.len() {
            if self.density[i] > self.density[best] {
                best = i;
            }
        }
        self.x[best]
    }

    /// Trapezoid integral over the grid; close to 1 when the grid covers the tails.
    pub fn mass(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

fn mean(data: &[f64]) -> f64 {
    data.iter().sum::<f64>() / data.len() as f64
}

fn sample_sd(data: &[f64]) -> f64 {
    if data.len() < 2 {
        return 0.0;
    }
    let m = mean(data);
    (data.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (data.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`. Zero when the data
/// has no spread.
pub fn silverman_bandwidth(data: &[f64]) -> f64 {
    if data.len() < 2 {
        return 0.0;
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sd = sample_sd(data);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (data.len() as f64).powf(-0.2)
}

/// Moment skewness `m3 / m2^(3/2)`; zero for data without spread.
pub fn skewness(data: &[f64]) -> f64 {
    let m = mean(data);
    let m2 = data.iter().map(|x| (x - m).powi(2)).sum::<f64>() / data.len() as f64;
    let m3 = data.iter().map(|x| (x - m).powi(3)).sum::<f64>() / data.len() as f64;
    if m2 > 0.0 {
        m3 / m2.powf(1.5)
    } else {
        0.0
    }
}

/// Gaussian KDE on `points` evenly spaced values spanning the data plus
/// three bandwidths on each side.
pub fn gaussian_kde(data: &[f64], points: usize) -> Result<DensityEstimate> {
    if data.is_empty() {
        return Err(Error::invalid("cannot estimate a density of an empty universe"));
    }
    if points < 2 {
        return Err(Error::invalid("density grid needs at least 2 points"));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("density input must be finite"));
    }
    let mut h = silverman_bandwidth(data);
    let degenerate = !(h > 0.0);
    if degenerate {
        // a single value or identical values: a narrow bump around it
        let scale = data.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        h = if scale > 0.0 { 0.1 * scale } else { 1.0 };
        warn!("{} sample(s) without spread; density uses a fallback bandwidth {h:e}", data.len());
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let step = (hi - lo) / (points - 1) as f64;
    let norm = 1.0 / (data.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let density = x
        .iter()
        .map(|&g| norm * data.iter().map(|d| (-0.5 * ((g - d) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    Ok(DensityEstimate { x, density, bandwidth: h, samples: data.len(), degenerate })
}

#[derive(Debug, Clone, Serialize)]
pub struct VolatilityDensities {
    pub sigma: DensityEstimate,
    pub log_sigma: DensityEstimate,
    pub sigma_skewness: f64,
    pub log_sigma_skewness: f64,
    pub mean: f64,
    pub median: f64,
}

/// Densities of `sigma` and `ln sigma` for a volatility profile.
pub fn volatility_densities(profile: &VolatilityProfile, points: usize) -> Result<VolatilityDensities> {
    let s: Vec<f64> = profile.sigma.iter().cloned().collect();
    if s.is_empty() {
        return Err(Error::invalid("cannot estimate a density of an empty universe"));
    }
    let logs: Vec<f64> = s.iter().map(|x| x.ln()).collect();
    let mut sorted = s.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(VolatilityDensities {
        sigma: gaussian_kde(&s, points)?,
        log_sigma: gaussian_kde(&logs, points)?,
        sigma_skewness: skewness(&s),
        log_sigma_skewness: skewness(&logs),
        mean: mean(&s),
        median: quantile(&sorted, 0.5),
    })
}
