//! Seeded plant simulation and episode logging.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control::{
    check_membership, closed_loop, solve_dare, CostMatrices, DareOptions, StabilizabilityParams,
    SystemParams,
};
use crate::controllers::{Controller, ControllerRngs};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, spectral_radius};

/// States with a larger Euclidean norm end the episode as diverged.
pub const DIVERGENCE_GUARD: f64 = 1e30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub sys: SystemParams,
    pub cost: CostMatrices,
    pub sigma_w: f64,
    pub x0: DVector<f64>,
    pub seed: u64,
}

impl PlantConfig {
    pub fn new(sys: SystemParams, cost: CostMatrices, sigma_w: f64, seed: u64) -> Result<Self> {
        let x0 = DVector::zeros(sys.n());
        let cfg = Self {
            sys,
            cost,
            sigma_w,
            x0,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_w = {} must be positive", self.sigma_w)));
        }
        if self.x0.len() != self.sys.n() || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("x0 must be a finite n-vector".into()));
        }
        if self.cost.q.nrows() != self.sys.n() || self.cost.r.nrows() != self.sys.d() {
            return Err(Error::DimensionMismatch("cost matrices do not match the plant".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// One transition. Returns `(x_next, xᵀQx + uᵀRu)`; the cost belongs to the
/// current pair `(x, u)`.
pub fn plant_step<R: Rng + ?Sized>(
    cfg: &PlantConfig,
    x: &DVector<f64>,
    u: &DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, f64)> {
    let (n, d) = (cfg.sys.n(), cfg.sys.d());
    if x.len() != n || u.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "x has length {}, u has length {}; plant has n = {n}, d = {d}",
            x.len(),
            u.len()
        )));
    }
    let cost = (x.transpose() * &cfg.cost.q * x)[(0, 0)] + (u.transpose() * &cfg.cost.r * u)[(0, 0)];
    let w = DVector::from_fn(n, |_, _| cfg.sigma_w * rng.sample::<f64, _>(StandardNormal));
    let next = &cfg.sys.a * x + &cfg.sys.b * u + w;
    let norm = next.norm();
    if !(norm <= DIVERGENCE_GUARD) {
        return Err(Error::Diverged { norm });
    }
    Ok((next, cost))
}

/// Longitudinal Boeing 747 dynamics with `Q = I₄`, `R = I₂`, `σ_w = 1`.
pub fn boeing_plant() -> PlantConfig {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.99,  0.03, -0.02, -0.32,
        0.01,  0.47,  4.7,   0.0,
        0.02, -0.06,  0.4,   0.0,
        0.01, -0.04,  0.72,  0.99,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
         0.01, 0.99,
        -3.44, 1.66,
        -0.83, 0.44,
        -0.47, 0.25,
    ]);
    PlantConfig::new(
        SystemParams::new(a, b).expect("valid dimensions"),
        CostMatrices::identity(4, 2),
        1.0,
        0,
    )
    .expect("valid plant")
}

/// Admissible-set parameters for the Boeing plant. The optimal gain has
/// `‖K‖₂ ≈ 1.118`, the closed loop `ρ ≈ 0.9627` and `‖Θ*‖_F ≈ 6.465`.
pub fn boeing_stabilizability() -> StabilizabilityParams {
    StabilizabilityParams::new(1.5, 0.02, 10.0).expect("valid params")
}

/// Scalar plant `a = 0.9`, `b = 1`, `q = r = 1`, `σ_w = 1`.
pub fn scalar_plant() -> PlantConfig {
    PlantConfig::new(
        SystemParams::scalar(0.9, 1.0).expect("valid"),
        CostMatrices::identity(1, 1),
        1.0,
        0,
    )
    .expect("valid plant")
}

pub fn scalar_stabilizability() -> StabilizabilityParams {
    StabilizabilityParams::new(2.0, 0.05, 5.0).expect("valid params")
}

/// Substream indices of a run seed.
pub const PLANT_STREAM: u64 = 0;
pub const SAMPLING_STREAM: u64 = 1;
pub const EXPLORATION_STREAM: u64 = 2;

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn controller_rngs(seed: u64) -> ControllerRngs {
    ControllerRngs {
        sampling: stream(seed, SAMPLING_STREAM),
        exploration: stream(seed, EXPLORATION_STREAM),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Diagnostics {
    /// Evaluate `J(Θ̃) ≤ J(Θ*)` at each policy update.
    pub optimism: bool,
    /// Evaluate `ρ(A* + B* K)` at each policy update.
    pub stabilization: bool,
}

impl Diagnostics {
    pub fn all() -> Self {
        Self {
            optimism: true,
            stabilization: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub cost: f64,
    pub cum_regret: f64,
    pub state_norm: f64,
    pub policy_id: usize,
    /// `‖Θ̂ − Θ*‖₂` after the step's observation.
    pub est_error: Option<f64>,
    pub lambda_min_v: Option<f64>,
    pub optimistic: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub t: usize,
    pub policy_id: usize,
    pub j_model: f64,
    pub attempts: usize,
    pub scale_used: f64,
    pub optimistic: Option<bool>,
    /// `ρ(A* + B* K)` of the deployed gain.
    pub true_closed_loop_radius: Option<f64>,
    /// Whether the sampled model passes the membership test under the run's
    /// parameters; filled by the stabilization diagnostic.
    pub in_set: Option<bool>,
}

impl PolicyRecord {
    pub fn stabilizing(&self) -> Option<bool> {
        self.true_closed_loop_radius.map(|r| r < 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub controller: String,
    pub seed: u64,
    pub horizon: usize,
    pub j_star: f64,
    pub records: Vec<StepRecord>,
    pub policies: Vec<PolicyRecord>,
    pub replan_failures: usize,
    pub regret: f64,
    pub max_state_norm: f64,
    pub diverged: bool,
    /// `Σ (J(Θ̃_t) − J(Θ*))` over steps, sampled at each policy update.
    pub rts_trace: Vec<f64>,
    pub rts_total: f64,
}

impl RunLog {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn optimism_flags(&self) -> Vec<Option<bool>> {
        self.policies.iter().map(|p| p.optimistic).collect()
    }
}

/// Runs `horizon` act, step, observe cycles. The plant draws from substream 0
/// of `plant.seed`; the controller gets substreams 1 and 2.
pub fn run_episode<C: Controller + ?Sized>(
    plant: &PlantConfig,
    controller: &mut C,
    horizon: usize,
    diagnostics: Diagnostics,
    stab: Option<&StabilizabilityParams>,
) -> Result<RunLog> {
    plant.validate()?;
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let dare = DareOptions::with_sigma(plant.sigma_w);
    let j_star = solve_dare(&plant.sys, &plant.cost, &dare)?.j;
    let theta_star = plant.sys.theta();
    let mut plant_rng = stream(plant.seed, PLANT_STREAM);
    let mut rngs = controller_rngs(plant.seed);

    let mut records = Vec::with_capacity(horizon);
    let mut policies: Vec<PolicyRecord> = Vec::new();
    let mut rts_trace = Vec::new();
    let mut rts_total = 0.0;
    let mut current_j: Option<f64> = None;
    let mut current_flag: Option<bool> = None;
    let mut replan_failures = 0;
    let mut cum_cost = 0.0;
    let mut max_state_norm: f64 = 0.0;
    let mut diverged = false;
    let mut x = plant.x0.clone();

    for t in 0..horizon {
        let action = controller.act(&x, &mut rngs)?;
        if action.replan_failed.is_some() {
            replan_failures += 1;
        }
        if let Some(update) = &action.update {
            let optimistic = diagnostics.optimism.then(|| update.j <= j_star);
            let (radius, in_set) = if diagnostics.stabilization {
                let r = closed_loop(&plant.sys, &update.gain).and_then(|m| spectral_radius(&m))?;
                let member = match stab {
                    Some(params) => {
                        let model = SystemParams::from_theta(&update.theta, plant.sys.n())?;
                        Some(check_membership(&model, &plant.cost, params, &dare, None)?.is_member())
                    }
                    None => None,
                };
                (Some(r), member)
            } else {
                (None, None)
            };
            current_j = Some(update.j);
            current_flag = optimistic;
            policies.push(PolicyRecord {
                t,
                policy_id: action.policy_id,
                j_model: update.j,
                attempts: update.attempts,
                scale_used: update.scale_used,
                optimistic,
                true_closed_loop_radius: radius,
                in_set,
            });
            rts_trace.push(rts_total);
        }
        if let Some(j) = current_j {
            rts_total += j - j_star;
        }

        let state_norm = x.norm();
        max_state_norm = max_state_norm.max(state_norm);
        let (next, cost) = match plant_step(plant, &x, &action.u, &mut plant_rng) {
            Ok(v) => v,
            Err(Error::Diverged { .. }) => {
                diverged = true;
                let cost = (x.transpose() * &plant.cost.q * &x)[(0, 0)]
                    + (action.u.transpose() * &plant.cost.r * &action.u)[(0, 0)];
                cum_cost += cost;
                records.push(StepRecord {
                    t,
                    x: x.iter().copied().collect(),
                    u: action.u.iter().copied().collect(),
                    cost,
                    cum_regret: cum_cost - (t + 1) as f64 * j_star,
                    state_norm,
                    policy_id: action.policy_id,
                    est_error: None,
                    lambda_min_v: None,
                    optimistic: current_flag,
                });
                break;
            }
            Err(e) => return Err(e),
        };
        controller.observe(&x, &action.u, &next)?;
        cum_cost += cost;
        let (est_error, lambda_min_v) = match controller.estimator() {
            Some(rls) => (
                Some(spectral_norm(&(&rls.theta_hat - &theta_star))),
                Some(rls.min_eigenvalue_v()),
            ),
            None => (None, None),
        };
        records.push(StepRecord {
            t,
            x: x.iter().copied().collect(),
            u: action.u.iter().copied().collect(),
            cost,
            cum_regret: cum_cost - (t + 1) as f64 * j_star,
            state_norm,
            policy_id: action.policy_id,
            est_error,
            lambda_min_v,
            optimistic: current_flag,
        });
        x = next;
    }
    if !diverged {
        max_state_norm = max_state_norm.max(x.norm());
    }

    let regret = records.last().map_or(0.0, |r| r.cum_regret);
    Ok(RunLog {
        controller: controller.name(),
        seed: plant.seed,
        horizon,
        j_star,
        records,
        policies,
        replan_failures,
        regret,
        max_state_norm,
        diverged,
        rts_trace,
        rts_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::LinearFeedback;

    fn quiet_scalar(a: f64) -> PlantConfig {
        PlantConfig::new(
            SystemParams::scalar(a, 1.0).unwrap(),
            CostMatrices::identity(1, 1),
            1e-300,
            0,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_origin_stays_put() {
        let cfg = quiet_scalar(0.9);
        let mut rng = stream(1, 0);
        let (next, cost) = plant_step(&cfg, &DVector::zeros(1), &DVector::zeros(1), &mut rng).unwrap();
        assert!(next[0].abs() < 1e-290);
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn noiseless_optimal_step() {
        let cfg = quiet_scalar(0.9);
        let mut rng = stream(1, 0);
        let (next, cost) = plant_step(
            &cfg,
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, -0.53766),
            &mut rng,
        )
        .unwrap();
        assert!((next[0] - 0.36234).abs() < 1e-12);
        assert!((cost - 1.289078).abs() < 1e-5);
    }

    #[test]
    fn noise_marginal_variance() {
        let sys = SystemParams::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let cfg = PlantConfig::new(sys, CostMatrices::identity(2, 1), 1.7, 3).unwrap();
        let mut rng = stream(3, 0);
        let (x, u) = (DVector::zeros(2), DVector::zeros(1));
        let mut sums = [0.0; 2];
        let steps = 100_000;
        for _ in 0..steps {
            let (next, _) = plant_step(&cfg, &x, &u, &mut rng).unwrap();
            for i in 0..2 {
                sums[i] += next[i] * next[i];
            }
        }
        for s in sums {
            let var = s / steps as f64;
            assert!((var / (1.7 * 1.7) - 1.0).abs() < 0.03, "variance {var}");
        }
    }

    #[test]
    fn guard_flags_divergence() {
        let cfg = quiet_scalar(1.0);
        let mut rng = stream(1, 0);
        let err = plant_step(&cfg, &DVector::from_element(1, 1e31), &DVector::zeros(1), &mut rng);
        assert!(matches!(err, Err(Error::Diverged { .. })));
    }

    #[test]
    fn boeing_entries() {
        let p = boeing_plant();
        assert_eq!((p.sys.n(), p.sys.d()), (4, 2));
        assert_eq!(p.sys.a[(0, 0)], 0.99);
        assert_eq!(p.sys.a[(1, 2)], 4.7);
        assert_eq!(p.sys.b[(1, 0)], -3.44);
        assert_eq!(p.sigma_w, 1.0);
    }

    #[test]
    fn boeing_truth_is_admissible() {
        let p = boeing_plant();
        let m = check_membership(&p.sys, &p.cost, &boeing_stabilizability(), &DareOptions::default(), None)
            .unwrap();
        assert!(m.is_member(), "{:?}", m.reason);
    }

    #[test]
    fn invalid_plant_rejected() {
        let sys = SystemParams::scalar(0.5, 1.0).unwrap();
        assert!(PlantConfig::new(sys.clone(), CostMatrices::identity(1, 1), 0.0, 0).is_err());
        let mut p = PlantConfig::new(sys, CostMatrices::identity(1, 1), 1.0, 0).unwrap();
        p.x0 = DVector::from_element(1, f64::NAN);
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_controller_on_unstable_plant_diverges() {
        let plant = PlantConfig::new(
            SystemParams::scalar(1.1, 1.0).unwrap(),
            CostMatrices::identity(1, 1),
            1.0,
            5,
        )
        .unwrap();
        let mut c = LinearFeedback::zero(1, 1);
        let log = run_episode(&plant, &mut c, 2000, Diagnostics::default(), None).unwrap();
        // 1.1^t crosses the 1e30 guard near t = 725
        assert!(log.diverged);
        assert!(log.steps() < 800, "diverged after {} steps", log.steps());
    }

    #[test]
    fn regret_identity_and_determinism() {
        let plant = scalar_plant().with_seed(11);
        let k = solve_dare(&plant.sys, &plant.cost, &DareOptions::default()).unwrap().k;
        let log = run_episode(&plant, &mut LinearFeedback::new(k.clone()), 500, Diagnostics::default(), None).unwrap();
        let total: f64 = log.records.iter().map(|r| r.cost).sum();
        let recomputed = total - 500.0 * log.j_star;
        assert!((log.regret - recomputed).abs() <= 1e-6 * recomputed.abs().max(1.0));
        let again = run_episode(&plant, &mut LinearFeedback::new(k), 500, Diagnostics::default(), None).unwrap();
        assert_eq!(log, again);
    }
}
