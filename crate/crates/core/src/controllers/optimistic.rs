//! Projected-gradient search for a low-cost model inside the confidence
//! ellipsoid, used by the optimism-based baselines.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::{
    check_membership, optimal_cost_gradient, solve_dare_from, CostMatrices, DareOptions,
    MembershipReason, RiccatiSolution, StabilizabilityParams, SystemParams,
};
use crate::error::{Error, Result};
use crate::estimation::RlsState;

/// How the cost gradient is obtained at each iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GradientMode {
    /// Envelope-theorem gradient `2 P A_c Σ [I Kᵀ]`, two Lyapunov-sized solves.
    Analytic,
    /// Central differences of `J` with the given per-entry step.
    FiniteDifference { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub iterations: usize,
    /// Step length as a fraction of the ellipsoid radius, measured in the
    /// `V`-weighted norm.
    pub step_scale: f64,
    pub gradient: GradientMode,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            step_scale: 0.1,
            gradient: GradientMode::Analytic,
        }
    }
}

/// Result of [`optimistic_search`].
#[derive(Debug, Clone)]
pub struct OptimisticModel {
    pub theta: DMatrix<f64>,
    pub solution: RiccatiSolution,
    /// Number of iterates that passed the membership test.
    pub feasible_iterates: usize,
}

/// Approximately minimizes `J(Θ)` over `{‖V^{1/2}(Θ − Θ̂)‖_F ≤ radius} ∩ 𝒮`.
///
/// Steps follow the `V⁻¹`-preconditioned gradient, normalized in the
/// `V`-norm; iterates leaving the ellipsoid are rescaled back onto it. A step
/// is taken when it lowers `J`, otherwise the step length is halved. The best
/// admissible iterate (including `Θ̂` itself) is returned.
pub fn optimistic_search(
    state: &RlsState,
    radius: f64,
    params: &StabilizabilityParams,
    cost: &CostMatrices,
    dare: &DareOptions,
    cfg: &PgdConfig,
) -> Result<OptimisticModel> {
    let n = state.n;
    let center = &state.theta_hat;
    let sigma_w = dare.sigma_w;

    let mut best: Option<(DMatrix<f64>, RiccatiSolution)> = None;
    let mut feasible = 0;
    let eval = |theta: &DMatrix<f64>, warm: Option<&DMatrix<f64>>| -> Result<_> {
        let sys = SystemParams::from_theta(theta, n)?;
        check_membership(&sys, cost, params, dare, warm).map(|m| (sys, m))
    };

    let (mut sys, m) = eval(center, None)?;
    let mut current_sol = m.solution.clone();
    if m.is_member() {
        feasible += 1;
        best = Some((center.clone(), m.solution.clone().expect("member has a solution")));
    }
    let mut theta = center.clone();
    let mut step = cfg.step_scale * radius;

    if radius > 0.0 {
        for _ in 0..cfg.iterations {
            let Some(sol) = current_sol.as_ref() else { break };
            let grad = match cfg.gradient {
                GradientMode::Analytic => match optimal_cost_gradient(&sys, sol, sigma_w) {
                    Ok(g) => g,
                    Err(Error::NotStabilizable(_)) => break,
                    Err(e) => return Err(e),
                },
                GradientMode::FiniteDifference { step: h } => {
                    finite_difference_gradient(&theta, n, cost, dare, &sol.p, h)?
                }
            };
            // preconditioned direction V⁻¹ g, normalized so that its V-norm is one
            let dir = state.solve(&grad)?;
            let vnorm = (grad.transpose() * &dir).trace().max(0.0).sqrt();
            if !(vnorm > 0.0 && vnorm.is_finite()) {
                break;
            }
            let mut candidate = &theta - dir * (step / vnorm);
            let dev = &candidate - center;
            let w = (dev.transpose() * &state.v * &dev).trace().max(0.0).sqrt();
            if w > radius {
                candidate = center + dev * (radius / w);
            }
            let (cand_sys, cm) = eval(&candidate, Some(&sol.p))?;
            // iterates may pass through models outside the set as long as
            // their Riccati equation is solvable; only members become the best
            match cm.solution {
                Some(cand_sol) if cand_sol.j < sol.j => {
                    if cm.reason == MembershipReason::Member {
                        feasible += 1;
                        if best.as_ref().map_or(true, |(_, b)| cand_sol.j < b.j) {
                            best = Some((candidate.clone(), cand_sol.clone()));
                        }
                    }
                    theta = candidate;
                    sys = cand_sys;
                    current_sol = Some(cand_sol);
                }
                _ => {
                    step *= 0.5;
                    if step < 1e-9 * radius {
                        break;
                    }
                }
            }
        }
    }

    best.map(|(theta, solution)| OptimisticModel {
        theta,
        solution,
        feasible_iterates: feasible,
    })
    .ok_or(Error::OptimisticSearchFailed)
}

/// Central-difference gradient of `J(Θ)` with warm-started Riccati solves.
pub fn finite_difference_gradient(
    theta: &DMatrix<f64>,
    n: usize,
    cost: &CostMatrices,
    dare: &DareOptions,
    warm: &DMatrix<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    let mut grad = DMatrix::zeros(theta.nrows(), theta.ncols());
    for i in 0..theta.nrows() {
        for j in 0..theta.ncols() {
            let mut plus = theta.clone();
            plus[(i, j)] += h;
            let mut minus = theta.clone();
            minus[(i, j)] -= h;
            let jp = solve_dare_from(&SystemParams::from_theta(&plus, n)?, cost, warm, dare)?.j;
            let jm = solve_dare_from(&SystemParams::from_theta(&minus, n)?, cost, warm, dare)?.j;
            grad[(i, j)] = (jp - jm) / (2.0 * h);
        }
    }
    Ok(grad)
}
