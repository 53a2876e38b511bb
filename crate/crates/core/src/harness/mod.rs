//! Benchmark orchestration: parallel seeded episodes, per-run artifacts and
//! cross-run summaries.

mod config;
mod output;
mod stats;

pub use config::{
    BenchConfig, ControllerSpec, PlantSpec, ResolvedBench, ResolvedController, DEFAULT_DELTA,
};
pub use output::{read_step_csv, step_csv, write_atomic, write_json, StepRow, STEP_CSV_HEADER};
pub use stats::{fit_regret_slope, gaussian_tail, truncated_mean, SlopeFit, Spread, BOOTSTRAP_RESAMPLES};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{StabilizabilityParams, SystemParams};
use crate::controllers::{AdaptiveController, Algorithm, TsacConfig};
use crate::error::{Error, Result};
use crate::estimation::RlsState;
use crate::sampling::{is_optimistic, ts_sample_with_radius, SamplingOptions};
use crate::sim::{run_episode, Diagnostics, PlantConfig, RunLog};

/// Trace format for per-step files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    #[default]
    Csv,
    Json,
}

/// Seed of run `run` for controller `index`. Paired seeds share the plant
/// noise across controllers.
pub fn run_seed(base_seed: u64, run: usize, index: usize, paired: bool) -> u64 {
    let base = base_seed.wrapping_add(run as u64);
    if paired {
        base
    } else {
        base ^ ((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Runs one controller over the given seeds, in parallel, returning logs in
/// seed order.
pub fn run_many(
    plant: &PlantConfig,
    stab: &StabilizabilityParams,
    algorithm: Algorithm,
    cfg: &TsacConfig,
    horizon: usize,
    seeds: &[u64],
    diagnostics: Diagnostics,
    threads: usize,
) -> Result<Vec<RunLog>> {
    let theta_star = plant.sys.theta();
    let job = |&seed: &u64| -> Result<RunLog> {
        let mut ctrl = AdaptiveController::new(algorithm, cfg.clone())?.with_reference(theta_star.clone());
        run_episode(&plant.clone().with_seed(seed), &mut ctrl, horizon, diagnostics, Some(stab))
    };
    pool(threads)?.install(|| seeds.par_iter().map(job).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub hits: usize,
    pub total: usize,
}

impl WindowStats {
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }

    fn add(&mut self, other: &WindowStats) {
        self.hits += other.hits;
        self.total += other.total;
    }
}

/// Per-run JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub controller: String,
    pub algorithm: Algorithm,
    pub run: usize,
    pub seed: u64,
    pub horizon: usize,
    pub steps: usize,
    pub j_star: f64,
    pub regret: f64,
    pub max_state_norm: f64,
    pub diverged: bool,
    pub policy_updates: usize,
    pub replan_failures: usize,
    pub fallback_updates: usize,
    /// Optimistic policy updates at or after `t_w`.
    pub optimism: Option<WindowStats>,
    /// Policy updates at or after `t_w` whose gain stabilizes the true plant.
    pub stabilizing: Option<WindowStats>,
    pub rts_total: f64,
    pub config: TsacConfig,
}

impl RunSummary {
    pub fn from_log(label: &str, algorithm: Algorithm, run: usize, cfg: &TsacConfig, log: &RunLog) -> Self {
        let post: Vec<_> = log.policies.iter().filter(|p| p.t >= cfg.t_w).collect();
        let window = |f: &dyn Fn(&crate::sim::PolicyRecord) -> Option<bool>| {
            let flags: Vec<bool> = post.iter().filter_map(|p| f(p)).collect();
            (!flags.is_empty()).then(|| WindowStats {
                hits: flags.iter().filter(|&&b| b).count(),
                total: flags.len(),
            })
        };
        Self {
            controller: label.into(),
            algorithm,
            run,
            seed: log.seed,
            horizon: log.horizon,
            steps: log.steps(),
            j_star: log.j_star,
            regret: log.regret,
            max_state_norm: log.max_state_norm,
            diverged: log.diverged,
            policy_updates: log.policies.len(),
            replan_failures: log.replan_failures,
            fallback_updates: log.policies.iter().filter(|p| p.scale_used < 1.0).count(),
            optimism: window(&|p| p.optimistic),
            stabilizing: window(&|p| p.stabilizing()),
            rts_total: log.rts_total,
            config: cfg.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub regret: Spread,
    pub max_state_norm: Spread,
    pub divergences: usize,
    pub p_opt: Option<f64>,
    pub optimism: Option<WindowStats>,
    pub stabilizing: Option<WindowStats>,
    pub stabilizing_fraction: Option<f64>,
    pub mean_rts_total: f64,
    pub replan_failures: usize,
    pub fallback_updates: usize,
}

impl ControllerSummary {
    pub fn from_runs(algorithm: Algorithm, runs: &[RunSummary]) -> Result<Self> {
        let regrets: Vec<f64> = runs.iter().map(|r| r.regret).collect();
        let norms: Vec<f64> = runs.iter().map(|r| r.max_state_norm).collect();
        let pool_windows = |f: &dyn Fn(&RunSummary) -> Option<WindowStats>| {
            runs.iter().filter_map(f).fold(None, |acc: Option<WindowStats>, w| {
                let mut acc = acc.unwrap_or(WindowStats { hits: 0, total: 0 });
                acc.add(&w);
                Some(acc)
            })
        };
        let optimism = pool_windows(&|r| r.optimism);
        let stabilizing = pool_windows(&|r| r.stabilizing);
        Ok(Self {
            algorithm,
            runs: runs.len(),
            regret: Spread::of(&regrets)?,
            max_state_norm: Spread::of(&norms)?,
            divergences: runs.iter().filter(|r| r.diverged).count(),
            p_opt: optimism.and_then(|w| w.fraction()),
            optimism,
            stabilizing,
            stabilizing_fraction: stabilizing.and_then(|w| w.fraction()),
            mean_rts_total: runs.iter().map(|r| r.rts_total).sum::<f64>() / runs.len() as f64,
            replan_failures: runs.iter().map(|r| r.replan_failures).sum(),
            fallback_updates: runs.iter().map(|r| r.fallback_updates).sum(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub runs: usize,
    pub horizon: usize,
    pub base_seed: u64,
    pub paired_seeds: bool,
    pub j_star: f64,
    pub q1: f64,
    pub controllers: BTreeMap<String, ControllerSummary>,
}

/// Result of [`bench`]: the summary and the per-run records behind it.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub summary: BenchSummary,
    pub runs: BTreeMap<String, Vec<RunSummary>>,
    pub files: Vec<PathBuf>,
}

/// Runs every controller over `runs` seeds. With an output directory, writes
/// `<label>/run_NNNN.json`, optional `<label>/steps_NNNN.{csv,json}` and
/// `summary.json`.
pub fn bench(config: &BenchConfig, out_dir: Option<&Path>, format: TraceFormat) -> Result<BenchOutcome> {
    let resolved = config.resolve()?;
    let mut runs_by_label = BTreeMap::new();
    let mut controllers = BTreeMap::new();
    let mut files = Vec::new();
    let mut j_star = f64::NAN;

    for (index, ctrl) in resolved.controllers.iter().enumerate() {
        let seeds: Vec<u64> = (0..config.runs)
            .map(|r| run_seed(config.base_seed, r, index, config.paired_seeds))
            .collect();
        let logs = run_many(
            &resolved.plant,
            &resolved.stab,
            ctrl.algorithm,
            &ctrl.config,
            config.horizon,
            &seeds,
            config.diagnostics,
            config.threads,
        )?;
        let summaries: Vec<RunSummary> = logs
            .iter()
            .enumerate()
            .map(|(r, log)| RunSummary::from_log(&ctrl.label, ctrl.algorithm, r, &ctrl.config, log))
            .collect();
        if let Some(first) = logs.first() {
            j_star = first.j_star;
        }
        if let Some(dir) = out_dir {
            let sub = dir.join(&ctrl.label);
            for (r, (log, summary)) in logs.iter().zip(&summaries).enumerate() {
                let path = sub.join(format!("run_{r:04}.json"));
                write_json(&path, summary)?;
                files.push(path);
                if config.step_traces {
                    let path = match format {
                        TraceFormat::Csv => {
                            let p = sub.join(format!("steps_{r:04}.csv"));
                            write_atomic(&p, &step_csv(log)?)?;
                            p
                        }
                        TraceFormat::Json => {
                            let p = sub.join(format!("steps_{r:04}.json"));
                            write_json(&p, &log.records)?;
                            p
                        }
                    };
                    files.push(path);
                }
            }
        }
        controllers.insert(ctrl.label.clone(), ControllerSummary::from_runs(ctrl.algorithm, &summaries)?);
        runs_by_label.insert(ctrl.label.clone(), summaries);
    }

    let summary = BenchSummary {
        runs: config.runs,
        horizon: config.horizon,
        base_seed: config.base_seed,
        paired_seeds: config.paired_seeds,
        j_star,
        q1: gaussian_tail(1.0),
        controllers,
    };
    if let Some(dir) = out_dir {
        let path = dir.join("summary.json");
        write_json(&path, &summary)?;
        files.push(path);
    }
    Ok(BenchOutcome {
        summary,
        runs: runs_by_label,
        files,
    })
}

/// Settings for a standalone optimism Monte-Carlo: `V = λ I`, estimates drawn
/// as `Θ* + σ_w V^{-1/2} ξ` (or fixed at `Θ*`), samples as in TS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimismSpec {
    pub lambda: f64,
    /// Perturbation radius; `None` uses `β` of the matching RLS state.
    pub radius: Option<f64>,
    pub draws: usize,
    pub recentre: bool,
    pub delta: f64,
    pub mu: f64,
}

impl Default for OptimismSpec {
    fn default() -> Self {
        Self {
            lambda: 1e3,
            radius: None,
            draws: 2000,
            recentre: true,
            delta: DEFAULT_DELTA,
            mu: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimismReport {
    pub p_opt: f64,
    pub optimistic: usize,
    pub accepted: usize,
    pub radius: f64,
    pub q1: f64,
}

/// Fraction of admissible TS draws with `J(Θ̃) ≤ J(Θ*)`.
pub fn optimism_monte_carlo(
    plant: &PlantConfig,
    stab: &StabilizabilityParams,
    spec: &OptimismSpec,
    seed: u64,
) -> Result<OptimismReport> {
    if spec.draws == 0 || !(spec.lambda >= spec.mu) {
        return Err(Error::InvalidConfig("optimism: draws ≥ 1 and lambda ≥ mu required".into()));
    }
    let (n, d) = (plant.sys.n(), plant.sys.d());
    let theta_star = plant.sys.theta();
    let mut state = RlsState::new(n, d, spec.mu, plant.sigma_w, stab.s_bound, spec.delta)?;
    state.v = nalgebra::DMatrix::identity(n + d, n + d) * spec.lambda;
    let radius = match spec.radius {
        Some(r) => r,
        None => state.confidence_radii()?.beta,
    };
    let opts = SamplingOptions {
        dare: crate::control::DareOptions::with_sigma(plant.sigma_w),
        ..SamplingOptions::default()
    };
    let mut rng = crate::sim::stream(seed, crate::sim::SAMPLING_STREAM);
    let scale = plant.sigma_w / spec.lambda.sqrt();
    let (mut optimistic, mut accepted) = (0, 0);
    for _ in 0..spec.draws {
        let mut centre = theta_star.clone();
        if spec.recentre {
            centre += crate::sampling::standard_normal_matrix(n + d, n, &mut rng) * scale;
        }
        state.theta_hat = centre;
        state.cross = &state.v * &state.theta_hat;
        let sample = match ts_sample_with_radius(&state, radius, stab, &plant.cost, &mut rng, &opts) {
            Ok(s) => s,
            Err(Error::SamplingExhausted { .. }) => continue,
            Err(e) => return Err(e),
        };
        accepted += 1;
        if is_optimistic(&sample, &plant.sys, &plant.cost, plant.sigma_w).unwrap_or(false) {
            optimistic += 1;
        }
    }
    if accepted == 0 {
        return Err(Error::InsufficientData("no admissible draws".into()));
    }
    Ok(OptimismReport {
        p_opt: optimistic as f64 / accepted as f64,
        optimistic,
        accepted,
        radius,
        q1: gaussian_tail(1.0),
    })
}

/// Checks a system against the admissible set and reports the schedule.
pub fn schedule_report(
    sys: &SystemParams,
    cost: &crate::control::CostMatrices,
    stab: &StabilizabilityParams,
    sigma_w: f64,
    horizon: usize,
    t_w: usize,
    mu: f64,
    delta: f64,
) -> Result<crate::schedule::ScheduleReport> {
    use crate::schedule::*;
    let (n, d) = (sys.n(), sys.d());
    let tau0 = policy_period(stab.kappa, stab.gamma);
    let x_s = state_bound(stab, sigma_w, n, horizon, t_w, delta);
    let p_bound = stab.p_bound(cost.alpha_bar());
    let z_bound = (1.0 + stab.kappa * stab.kappa).sqrt() * x_s;
    let (beta, upsilon) = nominal_radii(n, d, mu, sigma_w, stab.s_bound, delta, horizon, z_bound);
    Ok(ScheduleReport {
        tau0,
        t_w,
        t_r: recovery_time(t_w, n, d, tau0),
        x_s,
        p_bound,
        t0: stabilization_samples(beta, upsilon, sigma_w, n, p_bound),
        excitation_start: excitation_start(n, d, delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> BenchConfig {
        let mut cfg = BenchConfig::builtin("scalar", &[Algorithm::Tsac, Algorithm::Cec]);
        cfg.runs = 3;
        cfg.horizon = 60;
        cfg.threads = 2;
        cfg.defaults.mu = Some(1.0);
        cfg.defaults.tau0 = Some(10);
        cfg.defaults.t_w = Some(20);
        cfg.diagnostics = Diagnostics::all();
        cfg
    }

    #[test]
    fn paired_seeds_share_plant_noise() {
        assert_eq!(run_seed(5, 2, 0, true), run_seed(5, 2, 3, true));
        assert_ne!(run_seed(5, 2, 0, false), run_seed(5, 2, 1, false));
    }

    #[test]
    fn summary_matches_runs_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = bench(&small_config(), Some(dir.path()), TraceFormat::Csv).unwrap();
        for label in ["tsac", "cec"] {
            let runs = &out.runs[label];
            let s = &out.summary.controllers[label];
            let mean = runs.iter().map(|r| r.regret).sum::<f64>() / 3.0;
            assert!((s.regret.average - mean).abs() <= 1e-9 * mean.abs().max(1.0));
            for r in 0..3 {
                let text = std::fs::read_to_string(dir.path().join(label).join(format!("run_{r:04}.json"))).unwrap();
                let back: RunSummary = serde_json::from_str(&text).unwrap();
                assert!((back.regret - runs[r].regret).abs() <= 1e-9 * runs[r].regret.abs().max(1.0));
                let csv = std::fs::read_to_string(dir.path().join(label).join(format!("steps_{r:04}.csv"))).unwrap();
                assert_eq!(csv.lines().next().unwrap(), STEP_CSV_HEADER);
                assert_eq!(csv.lines().count(), 61);
            }
        }
        assert!(dir.path().join("summary.json").exists());
        assert_eq!(out.files.len(), 2 * 3 * 2 + 1);
    }

    #[test]
    fn bench_is_deterministic() {
        let a = bench(&small_config(), None, TraceFormat::Csv).unwrap();
        let b = bench(&small_config(), None, TraceFormat::Csv).unwrap();
        assert_eq!(
            serde_json::to_string(&a.summary).unwrap(),
            serde_json::to_string(&b.summary).unwrap()
        );
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut one = small_config();
        one.threads = 1;
        let a = bench(&one, None, TraceFormat::Csv).unwrap();
        let b = bench(&small_config(), None, TraceFormat::Csv).unwrap();
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn optimism_at_the_truth_is_certain() {
        let plant = crate::sim::scalar_plant();
        let stab = crate::sim::scalar_stabilizability();
        let spec = OptimismSpec {
            radius: Some(0.0),
            recentre: false,
            draws: 10,
            ..OptimismSpec::default()
        };
        let rep = optimism_monte_carlo(&plant, &stab, &spec, 1).unwrap();
        assert_eq!((rep.optimistic, rep.accepted), (10, 10));
    }

    #[test]
    fn schedule_report_values() {
        let plant = crate::sim::scalar_plant();
        let stab = crate::sim::scalar_stabilizability();
        let rep = schedule_report(&plant.sys, &plant.cost, &stab, 1.0, 10_000, 461, 1.0, 0.05).unwrap();
        assert_eq!(rep.tau0, 70);
        assert!(rep.t_r >= rep.t_w);
        assert!(rep.t0 > 0.0 && rep.x_s > 0.0);
        assert!((rep.excitation_start - 400.0 * 240f64.ln()).abs() < 1e-9);
    }
}
