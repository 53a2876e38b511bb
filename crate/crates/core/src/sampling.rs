//! Thompson-sampling perturbation of the least-squares estimate with rejection
//! onto the admissible set.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control::{
    check_membership, solve_dare, CostMatrices, DareOptions, RiccatiSolution,
    StabilizabilityParams, SystemParams,
};
use crate::error::{Error, Result};
use crate::estimation::RlsState;

/// Number of halvings of the perturbation scale before falling back to `Θ̂`.
pub const SCALE_LEVELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Draws per scale level.
    pub max_attempts: usize,
    pub scale_levels: usize,
    pub dare: DareOptions,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            max_attempts: 1000,
            scale_levels: SCALE_LEVELS,
            dare: DareOptions::default(),
        }
    }
}

/// An accepted draw `Θ̃ ∈ 𝒮` and its Riccati solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsSample {
    pub theta: DMatrix<f64>,
    pub attempts: usize,
    /// Multiplier applied to the perturbation; `1` unless the fallback engaged,
    /// `0` when the estimate itself was returned.
    pub scale_used: f64,
    pub optimistic_flag: Option<bool>,
    pub solution: RiccatiSolution,
}

impl TsSample {
    pub fn fallback_engaged(&self) -> bool {
        self.scale_used < 1.0
    }
}

/// `η` with independent standard normal entries.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Draws `Θ̂ + β_t V^{-1/2} η` and rejects until the candidate is admissible.
pub fn ts_sample<R: Rng + ?Sized>(
    state: &RlsState,
    params: &StabilizabilityParams,
    cost: &CostMatrices,
    rng: &mut R,
    opts: &SamplingOptions,
) -> Result<TsSample> {
    let radius = state.confidence_radii()?.beta;
    ts_sample_with_radius(state, radius, params, cost, rng, opts)
}

/// As [`ts_sample`] with an explicit perturbation radius in place of `β_t`.
pub fn ts_sample_with_radius<R: Rng + ?Sized>(
    state: &RlsState,
    radius: f64,
    params: &StabilizabilityParams,
    cost: &CostMatrices,
    rng: &mut R,
    opts: &SamplingOptions,
) -> Result<TsSample> {
    if opts.max_attempts == 0 {
        return Err(Error::InvalidConfig("max_attempts must be at least 1".into()));
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::NumericalFailure(format!("sampling radius {radius}")));
    }
    let n = state.n;
    let spread = state.v_inv_sqrt() * radius;
    let mut attempts = 0;
    let mut scale = 1.0;
    for _ in 0..=opts.scale_levels {
        for _ in 0..opts.max_attempts {
            attempts += 1;
            let eta = standard_normal_matrix(state.dim(), n, rng);
            let theta = &state.theta_hat + &spread * eta * scale;
            if let Some(solution) = admissible(&theta, n, params, cost, &opts.dare)? {
                return Ok(TsSample {
                    theta,
                    attempts,
                    scale_used: scale,
                    optimistic_flag: None,
                    solution,
                });
            }
        }
        scale *= 0.5;
    }
    attempts += 1;
    let theta = state.theta_hat.clone();
    match admissible(&theta, n, params, cost, &opts.dare)? {
        Some(solution) => Ok(TsSample {
            theta,
            attempts,
            scale_used: 0.0,
            optimistic_flag: None,
            solution,
        }),
        None => Err(Error::SamplingExhausted {
            attempts,
            reason: "neither perturbed draws nor the estimate lie in the admissible set".into(),
        }),
    }
}

fn admissible(
    theta: &DMatrix<f64>,
    n: usize,
    params: &StabilizabilityParams,
    cost: &CostMatrices,
    dare: &DareOptions,
) -> Result<Option<RiccatiSolution>> {
    if theta.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let sys = SystemParams::from_theta(theta, n)?;
    // cheap Frobenius rejection before any Riccati work
    if sys.frobenius_norm() > params.s_bound {
        return Ok(None);
    }
    let m = check_membership(&sys, cost, params, dare, None)?;
    Ok(if m.is_member() { m.solution } else { None })
}

/// `J(Θ̃) ≤ J(Θ*)`, each average cost from its own Riccati solution.
pub fn is_optimistic(
    sample: &TsSample,
    true_sys: &SystemParams,
    cost: &CostMatrices,
    sigma_w: f64,
) -> Result<bool> {
    let opts = DareOptions::with_sigma(sigma_w);
    let sampled = SystemParams::from_theta(&sample.theta, true_sys.n())?;
    let j_sample = solve_dare(&sampled, cost, &opts)?.j;
    let j_true = solve_dare(true_sys, cost, &opts)?.j;
    Ok(j_sample <= j_true)
}

/// Empirical fraction of optimistic samples among policy updates in `window`.
pub fn estimate_p_opt(trace: &[TsSample], window: Range<usize>) -> Result<f64> {
    let flags: Vec<Option<bool>> = trace.iter().map(|s| s.optimistic_flag).collect();
    optimistic_fraction(&flags, window)
}

/// [`estimate_p_opt`] over bare flags.
pub fn optimistic_fraction(flags: &[Option<bool>], window: Range<usize>) -> Result<f64> {
    let window = window.start.min(flags.len())..window.end.min(flags.len());
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut hits = 0usize;
    for (i, flag) in flags[window.clone()].iter().enumerate() {
        match flag {
            Some(true) => hits += 1,
            Some(false) => {}
            None => {
                return Err(Error::InsufficientData(format!(
                    "policy update {} has no optimism flag",
                    window.start + i
                )))
            }
        }
    }
    Ok(hits as f64 / window.len() as f64)
}
