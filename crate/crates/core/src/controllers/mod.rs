//! Adaptive controllers behind a single act/observe interface: TSAC, TS-LQR,
//! OFULQ, StabL and certainty equivalence.

mod optimistic;

pub use optimistic::{
    finite_difference_gradient, optimistic_search, GradientMode, OptimisticModel, PgdConfig,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control::{
    solve_dare, CostMatrices, DareOptions, StabilizabilityParams, SystemParams,
};
use crate::error::{Error, Result};
use crate::estimation::RlsState;
use crate::sampling::{ts_sample_with_radius, SamplingOptions};
use crate::schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Tsac,
    TsLqr,
    Ofulq,
    Stabl,
    Cec,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Tsac,
        Algorithm::TsLqr,
        Algorithm::Ofulq,
        Algorithm::Stabl,
        Algorithm::Cec,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Tsac => "tsac",
            Algorithm::TsLqr => "ts-lqr",
            Algorithm::Ofulq => "ofulq",
            Algorithm::Stabl => "stabl",
            Algorithm::Cec => "cec",
        }
    }

    /// Whether isotropic input noise is added during the first `t_w` steps.
    pub fn explores(self) -> bool {
        matches!(self, Algorithm::Tsac | Algorithm::Stabl | Algorithm::Cec)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key || (key == "tslqr" && *a == Algorithm::TsLqr))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown controller '{s}'")))
    }
}

/// Radius of the perturbation (TS) or search (OFU) ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusMode {
    /// `β_t(δ)` from the self-normalized bound.
    Confidence,
    /// `‖V^{1/2}(Θ̂ − Θ*)‖_F`, the realized estimation error. Needs the true
    /// parameters via [`AdaptiveController::with_reference`].
    EstimationError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    ImprovedExploration,
    StabilizingTs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsacConfig {
    pub stab: StabilizabilityParams,
    pub sigma_w: f64,
    pub cost: CostMatrices,
    pub delta: f64,
    pub t_w: usize,
    pub tau0: usize,
    pub mu: f64,
    pub sigma_nu: f64,
    pub horizon: usize,
    pub radius: RadiusMode,
    pub radius_scale: f64,
    pub sampling: SamplingOptions,
    pub pgd: PgdConfig,
    /// OFU-style controllers only re-plan once `det V` has doubled since the
    /// last update, on top of the `τ₀` minimum duration.
    pub det_doubling: bool,
}

impl TsacConfig {
    /// Defaults derived from the schedule formulas: `τ₀ = ceil(2γ⁻¹ ln(2κ√2))`,
    /// `t_w = max(ceil(0.5 √T ln T), 10(n+d))`, `μ = (1+κ²) X_s²` and
    /// `σ_ν = √2 κ σ_w`.
    pub fn with_defaults(
        stab: StabilizabilityParams,
        sigma_w: f64,
        cost: CostMatrices,
        delta: f64,
        horizon: usize,
    ) -> Self {
        let (n, d) = (cost.q.nrows(), cost.r.nrows());
        let t_w = schedule::default_exploration(horizon, n, d, 0.5);
        let x_s = schedule::state_bound(&stab, sigma_w, n, horizon, t_w, delta);
        Self {
            tau0: schedule::policy_period(stab.kappa, stab.gamma),
            mu: schedule::default_regularizer(&stab, x_s),
            sigma_nu: std::f64::consts::SQRT_2 * stab.kappa * sigma_w,
            stab,
            sigma_w,
            cost,
            delta,
            t_w,
            horizon,
            radius: RadiusMode::Confidence,
            radius_scale: 1.0,
            sampling: SamplingOptions {
                dare: DareOptions::with_sigma(sigma_w),
                ..SamplingOptions::default()
            },
            pgd: PgdConfig::default(),
            det_doubling: true,
        }
    }

    pub fn n(&self) -> usize {
        self.cost.q.nrows()
    }

    pub fn d(&self) -> usize {
        self.cost.r.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        self.stab.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.tau0 == 0 {
            return bad("tau0 must be at least 1".into());
        }
        if self.t_w > self.horizon {
            return bad(format!("t_w = {} exceeds horizon {}", self.t_w, self.horizon));
        }
        if self.t_w > 0 && !(self.sigma_nu > 0.0) {
            return bad("sigma_nu must be positive when t_w > 0".into());
        }
        if !(self.radius_scale >= 0.0 && self.radius_scale.is_finite()) {
            return bad(format!("radius_scale = {}", self.radius_scale));
        }
        if !(self.sigma_w > 0.0) {
            return bad(format!("sigma_w = {} must be positive", self.sigma_w));
        }
        Ok(())
    }

    fn dare(&self) -> DareOptions {
        DareOptions {
            sigma_w: self.sigma_w,
            ..self.sampling.dare
        }
    }
}

/// Independent generators owned by a controller for one run.
#[derive(Debug, Clone)]
pub struct ControllerRngs {
    pub sampling: ChaCha8Rng,
    pub exploration: ChaCha8Rng,
}

/// A newly deployed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyUpdate {
    pub theta: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    /// `J(Θ̃)` of the model the gain was designed for.
    pub j: f64,
    pub attempts: usize,
    pub scale_used: f64,
}

#[derive(Debug, Clone)]
pub struct Action {
    pub u: DVector<f64>,
    pub policy_id: usize,
    pub update: Option<PolicyUpdate>,
    /// A re-plan was due but failed; the previous gain stays in place.
    pub replan_failed: Option<String>,
}

/// A state-feedback controller driven by the simulator.
pub trait Controller: Send {
    fn name(&self) -> String;

    /// Input for the current state. Called once per step before
    /// [`Controller::observe`].
    fn act(&mut self, x: &DVector<f64>, rngs: &mut ControllerRngs) -> Result<Action>;

    fn observe(&mut self, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> Result<()>;

    /// Current least-squares state, when the controller learns.
    fn estimator(&self) -> Option<&RlsState> {
        None
    }
}

/// A fixed gain `u = K x`.
#[derive(Debug, Clone)]
pub struct LinearFeedback {
    pub gain: DMatrix<f64>,
}

impl LinearFeedback {
    pub fn new(gain: DMatrix<f64>) -> Self {
        Self { gain }
    }

    pub fn zero(n: usize, d: usize) -> Self {
        Self::new(DMatrix::zeros(d, n))
    }
}

impl Controller for LinearFeedback {
    fn name(&self) -> String {
        "linear-feedback".into()
    }

    fn act(&mut self, x: &DVector<f64>, _rngs: &mut ControllerRngs) -> Result<Action> {
        Ok(Action {
            u: &self.gain * x,
            policy_id: 0,
            update: None,
            replan_failed: None,
        })
    }

    fn observe(&mut self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> Result<()> {
        Ok(())
    }
}

/// The learning controllers, sharing the policy-period state machine.
#[derive(Debug, Clone)]
pub struct AdaptiveController {
    pub algorithm: Algorithm,
    pub cfg: TsacConfig,
    pub rls: RlsState,
    pub gain: DMatrix<f64>,
    pub current: Option<PolicyUpdate>,
    pub policy_age: usize,
    pub policy_id: usize,
    pub step: usize,
    reference: Option<DMatrix<f64>>,
    last_log_det: Option<f64>,
    deployed: bool,
}

impl AdaptiveController {
    pub fn new(algorithm: Algorithm, mut cfg: TsacConfig) -> Result<Self> {
        if algorithm == Algorithm::TsLqr {
            cfg.t_w = 0;
        }
        cfg.validate()?;
        let rls = RlsState::new(cfg.n(), cfg.d(), cfg.mu, cfg.sigma_w, cfg.stab.s_bound, cfg.delta)?;
        Ok(Self {
            algorithm,
            gain: DMatrix::zeros(cfg.d(), cfg.n()),
            cfg,
            rls,
            current: None,
            policy_age: 0,
            policy_id: 0,
            step: 0,
            reference: None,
            last_log_det: None,
            deployed: false,
        })
    }

    /// Supplies `Θ*` for [`RadiusMode::EstimationError`].
    pub fn with_reference(mut self, theta: DMatrix<f64>) -> Self {
        self.reference = Some(theta);
        self
    }

    pub fn phase(&self) -> Phase {
        if self.step < self.cfg.t_w {
            Phase::ImprovedExploration
        } else {
            Phase::StabilizingTs
        }
    }

    fn radius(&self) -> Result<f64> {
        let r = match self.cfg.radius {
            RadiusMode::Confidence => self.rls.confidence_radii()?.beta,
            RadiusMode::EstimationError => {
                let truth = self.reference.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("estimation-error radius needs the true parameters".into())
                })?;
                self.rls.weighted_distance(truth)?
            }
        };
        Ok(r * self.cfg.radius_scale)
    }

    fn replan(&mut self, rngs: &mut ControllerRngs) -> Result<Option<PolicyUpdate>> {
        let cfg = &self.cfg;
        let n = cfg.n();
        match self.algorithm {
            Algorithm::Tsac | Algorithm::TsLqr => {
                let radius = self.radius()?;
                let opts = SamplingOptions {
                    dare: cfg.dare(),
                    ..cfg.sampling
                };
                let s = ts_sample_with_radius(
                    &self.rls,
                    radius,
                    &cfg.stab,
                    &cfg.cost,
                    &mut rngs.sampling,
                    &opts,
                )?;
                Ok(Some(PolicyUpdate {
                    gain: s.solution.k.clone(),
                    j: s.solution.j,
                    theta: s.theta,
                    attempts: s.attempts,
                    scale_used: s.scale_used,
                }))
            }
            Algorithm::Ofulq | Algorithm::Stabl => {
                let log_det = self.rls.log_det_v()?;
                if cfg.det_doubling && self.deployed {
                    if let Some(last) = self.last_log_det {
                        if log_det < last + std::f64::consts::LN_2 {
                            return Ok(None);
                        }
                    }
                }
                let radius = self.radius()?;
                let m = optimistic_search(&self.rls, radius, &cfg.stab, &cfg.cost, &cfg.dare(), &cfg.pgd)?;
                self.last_log_det = Some(log_det);
                Ok(Some(PolicyUpdate {
                    gain: m.solution.k.clone(),
                    j: m.solution.j,
                    theta: m.theta,
                    attempts: m.feasible_iterates,
                    scale_used: 1.0,
                }))
            }
            Algorithm::Cec => {
                if self.step < cfg.t_w {
                    return Ok(None);
                }
                let sys = SystemParams::from_theta(&self.rls.theta_hat, n)?;
                let sol = solve_dare(&sys, &cfg.cost, &cfg.dare())?;
                Ok(Some(PolicyUpdate {
                    gain: sol.k,
                    j: sol.j,
                    theta: self.rls.theta_hat.clone(),
                    attempts: 1,
                    scale_used: 0.0,
                }))
            }
        }
    }
}

impl Controller for AdaptiveController {
    fn name(&self) -> String {
        self.algorithm.name().into()
    }

    fn act(&mut self, x: &DVector<f64>, rngs: &mut ControllerRngs) -> Result<Action> {
        if x.len() != self.cfg.n() {
            return Err(Error::DimensionMismatch(format!(
                "state of length {} for n = {}",
                x.len(),
                self.cfg.n()
            )));
        }
        let mut update = None;
        let mut replan_failed = None;
        if self.policy_age == 0 {
            match self.replan(rngs) {
                Ok(Some(p)) => {
                    if self.deployed {
                        self.policy_id += 1;
                    }
                    self.deployed = true;
                    self.gain = p.gain.clone();
                    self.current = Some(p.clone());
                    update = Some(p);
                }
                Ok(None) => {}
                Err(
                    e @ (Error::OptimisticSearchFailed
                    | Error::NotStabilizable(_)
                    | Error::SamplingExhausted { .. }),
                ) => {
                    replan_failed = Some(e.to_string());
                }
                Err(e) => return Err(e),
            }
        }
        let mut u = &self.gain * x;
        if self.algorithm.explores() && self.step < self.cfg.t_w {
            for ui in u.iter_mut() {
                let z: f64 = rngs.exploration.sample(StandardNormal);
                *ui += self.cfg.sigma_nu * z;
            }
        }
        self.policy_age = (self.policy_age + 1) % self.cfg.tau0;
        self.step += 1;
        Ok(Action {
            u,
            policy_id: self.policy_id,
            update,
            replan_failed,
        })
    }

    fn observe(&mut self, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> Result<()> {
        let z = DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied());
        self.rls.update(&z, x_next)
    }

    fn estimator(&self) -> Option<&RlsState> {
        Some(&self.rls)
    }
}
