//! Cross-run aggregation: truncated means, regret-slope fits and the Gaussian
//! tail reference for the optimism rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Mean of the smallest `ceil(p·len/100)` values.
pub fn truncated_mean(values: &[f64], percent: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("no values to average".into()));
    }
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::InvalidConfig(format!("percent {percent} outside (0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((percent * values.len() as f64 / 100.0).ceil() as usize).clamp(1, values.len());
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// Mean, best-95% and best-90% means of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub average: f64,
    pub top95: f64,
    pub top90: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Result<Self> {
        Ok(Self {
            average: truncated_mean(values, 100.0)?,
            top95: truncated_mean(values, 95.0)?,
            top90: truncated_mean(values, 90.0)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// 5th and 95th percentiles of the bootstrap slopes.
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
    /// Constant added to the mean curve before taking logs.
    pub shift: f64,
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;
const MIN_POINTS: usize = 10;

/// Fits `ln(mean R_t) = a + s ln t` over `t ∈ [t_min, T]` with `t` counted
/// from one. Curves are truncated to the shortest one. If the mean curve dips
/// to zero or below in the window, it is shifted by `|min| + 1`.
pub fn fit_regret_slope(curves: &[Vec<f64>], t_min: usize, seed: u64) -> Result<SlopeFit> {
    if curves.is_empty() {
        return Err(Error::InsufficientData("no regret curves".into()));
    }
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let start = t_min.max(1);
    if len < start || len + 1 - start < MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points in [{start}, {len}], need {MIN_POINTS}",
            (len + 1).saturating_sub(start)
        )));
    }
    let all: Vec<usize> = (0..curves.len()).collect();
    let (slope, intercept, shift) = fit_mean(curves, &all, start, len)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut pick = vec![0; curves.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for p in pick.iter_mut() {
            *p = rng.random_range(0..curves.len());
        }
        slopes.push(fit_mean(curves, &pick, start, len)?.0);
    }
    slopes.sort_by(f64::total_cmp);
    let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
    Ok(SlopeFit {
        slope,
        intercept,
        ci_low: q(0.05),
        ci_high: q(0.95),
        points: len + 1 - start,
        shift,
    })
}

fn fit_mean(curves: &[Vec<f64>], runs: &[usize], start: usize, len: usize) -> Result<(f64, f64, f64)> {
    let mean: Vec<f64> = (start..=len)
        .map(|t| runs.iter().map(|&r| curves[r][t - 1]).sum::<f64>() / runs.len() as f64)
        .collect();
    let min = mean.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::NumericalFailure("non-finite regret in the fit window".into()));
    }
    let shift = if min <= 0.0 { min.abs() + 1.0 } else { 0.0 };
    let xs: Vec<f64> = (start..=len).map(|t| (t as f64).ln()).collect();
    let ys: Vec<f64> = mean.iter().map(|m| (m + shift).ln()).collect();
    let (slope, intercept) = ols(&xs, &ys);
    Ok((slope, intercept, shift))
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Gaussian upper tail `Q(x) = 1 − Φ(x)`.
pub fn gaussian_tail(x: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    1.0 - normal.cdf(x)
}
