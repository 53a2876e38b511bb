//! Closed-form schedule constants: policy period, exploration length, state
//! bound, recovery time and the stabilization sample-size diagnostic.

use serde::{Deserialize, Serialize};

use crate::control::StabilizabilityParams;

/// `ceil(2 γ⁻¹ ln(2κ√2))`, at least one step.
pub fn policy_period(kappa: f64, gamma: f64) -> usize {
    let raw = 2.0 / gamma * (2.0 * kappa * std::f64::consts::SQRT_2).ln();
    (raw.ceil() as usize).max(1)
}

/// `max(ceil(c √T ln T), 10 (n + d))`, capped at the horizon.
pub fn default_exploration(horizon: usize, n: usize, d: usize, c: f64) -> usize {
    let t = horizon as f64;
    let sched = if horizon > 1 {
        (c * t.sqrt() * t.ln()).ceil() as usize
    } else {
        0
    };
    sched.max(10 * (n + d)).min(horizon)
}

/// `X_s = (12κ² + 2κ√2) γ⁻¹ σ_w √(2n ln(n (T − T_w) / δ))`.
pub fn state_bound(
    params: &StabilizabilityParams,
    sigma_w: f64,
    n: usize,
    horizon: usize,
    t_w: usize,
    delta: f64,
) -> f64 {
    let k = params.kappa;
    let span = horizon.saturating_sub(t_w).max(1) as f64;
    let log_term = (n as f64 * span / delta).ln().max(0.0);
    (12.0 * k * k + 2.0 * k * std::f64::consts::SQRT_2) / params.gamma
        * sigma_w
        * (2.0 * n as f64 * log_term).sqrt()
}

/// Default regularizer `(1 + κ²) X_s²`.
pub fn default_regularizer(params: &StabilizabilityParams, x_s: f64) -> f64 {
    (1.0 + params.kappa * params.kappa) * x_s * x_s
}

/// `T_r = T_w + (n + d) τ₀ ln(n + d)`, rounded up.
pub fn recovery_time(t_w: usize, n: usize, d: usize, tau0: usize) -> usize {
    let m = (n + d) as f64;
    t_w + (m * tau0 as f64 * m.ln()).ceil() as usize
}

/// `200 (n + d) ln(12/δ)`: the first step from which the excitation bound
/// `λ_min(V_t) ≥ t σ_w²/40` is claimed.
pub fn excitation_start(n: usize, d: usize, delta: f64) -> f64 {
    200.0 * (n + d) as f64 * (12.0 / delta).ln()
}

/// Confidence radii at horizon `T` under the nominal bound
/// `V_T ⪯ (μ + T z²) I`.
pub fn nominal_radii(
    n: usize,
    d: usize,
    mu: f64,
    sigma_w: f64,
    s_bound: f64,
    delta: f64,
    horizon: usize,
    z_bound: f64,
) -> (f64, f64) {
    let m = (n + d) as f64;
    let nf = n as f64;
    let log_ratio = 0.5 * m * ((mu + horizon as f64 * z_bound * z_bound) / mu).ln() - delta.ln();
    let beta = sigma_w * (2.0 * nf * log_ratio).sqrt() + mu.sqrt() * s_bound;
    let upsilon = beta * nf * (m * (nf * m / delta).ln()).sqrt();
    (beta, upsilon)
}

/// `T₀ = 49 (β_T + υ_T)² / (σ_w min(σ_w² n / (142 D⁷), 1 / (54² D¹⁰)))`.
pub fn stabilization_samples(beta_t: f64, upsilon_t: f64, sigma_w: f64, n: usize, p_bound: f64) -> f64 {
    let eps = (sigma_w * sigma_w * n as f64 / (142.0 * p_bound.powi(7)))
        .min(1.0 / (54.0f64.powi(2) * p_bound.powi(10)));
    49.0 * (beta_t + upsilon_t).powi(2) / (sigma_w * eps)
}

/// All schedule quantities for one configuration, for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub tau0: usize,
    pub t_w: usize,
    pub t_r: usize,
    pub x_s: f64,
    pub p_bound: f64,
    pub t0: f64,
    pub excitation_start: f64,
}
