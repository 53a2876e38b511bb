//! Benchmark configuration files (TOML).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::{CostMatrices, DareOptions, StabilizabilityParams, SystemParams};
use crate::controllers::{Algorithm, GradientMode, PgdConfig, RadiusMode, TsacConfig};
use crate::error::{Error, Result};
use crate::schedule;
use crate::sim::{self, Diagnostics, PlantConfig};

pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "yes")]
    pub paired_seeds: bool,
    /// Worker threads; `0` uses all cores.
    #[serde(default)]
    pub threads: usize,
    /// Write a per-step trace for every run.
    #[serde(default = "yes")]
    pub step_traces: bool,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub plant: PlantSpec,
    #[serde(default)]
    pub stabilizability: Option<StabilizabilityParams>,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default)]
    pub defaults: ControllerSpec,
    pub controllers: Vec<ControllerSpec>,
}

fn default_runs() -> usize {
    200
}

fn default_horizon() -> usize {
    200
}

fn yes() -> bool {
    true
}

/// A builtin plant name, inline matrices (row-major nested arrays), or a
/// builtin with some fields replaced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub builtin: Option<String>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    pub sigma_w: Option<f64>,
    pub x0: Option<Vec<f64>>,
}

/// Per-controller settings. Unset fields fall back to the `[defaults]`
/// section and then to the schedule formulas.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub algorithm: Option<Algorithm>,
    /// Output name; defaults to the algorithm name.
    pub label: Option<String>,
    pub t_w: Option<usize>,
    /// Constant `c` of the default exploration length `c √T ln T`.
    pub explore_c: Option<f64>,
    pub tau0: Option<usize>,
    pub mu: Option<f64>,
    pub sigma_nu: Option<f64>,
    pub delta: Option<f64>,
    pub radius: Option<RadiusMode>,
    pub radius_scale: Option<f64>,
    pub max_attempts: Option<usize>,
    pub scale_levels: Option<usize>,
    pub pgd_iterations: Option<usize>,
    pub pgd_step_scale: Option<f64>,
    /// Use central finite differences with this step instead of the
    /// analytic gradient.
    pub pgd_fd_step: Option<f64>,
    pub det_doubling: Option<bool>,
}

macro_rules! merge_fields {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl ControllerSpec {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self {
            algorithm: Some(algorithm),
            ..Self::default()
        }
    }

    /// Fills unset fields from `defaults`.
    pub fn merged(&self, defaults: &ControllerSpec) -> ControllerSpec {
        let mut out = self.clone();
        merge_fields!(out, defaults; algorithm, t_w, explore_c, tau0, mu, sigma_nu, delta, radius,
            radius_scale, max_attempts, scale_levels, pgd_iterations, pgd_step_scale, pgd_fd_step,
            det_doubling);
        out
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .or_else(|| self.algorithm.map(|a| a.name().to_string()))
            .unwrap_or_else(|| "controller".into())
    }

    /// Resolves the full controller configuration for a plant and horizon.
    pub fn build(&self, plant: &PlantConfig, stab: &StabilizabilityParams, horizon: usize) -> Result<TsacConfig> {
        let (n, d) = (plant.sys.n(), plant.sys.d());
        let delta = self.delta.unwrap_or(DEFAULT_DELTA);
        let mut cfg = TsacConfig::with_defaults(*stab, plant.sigma_w, plant.cost.clone(), delta, horizon);
        if let Some(c) = self.explore_c {
            cfg.t_w = schedule::default_exploration(horizon, n, d, c);
        }
        if let Some(t_w) = self.t_w {
            cfg.t_w = t_w;
        }
        cfg.mu = match self.mu {
            Some(mu) => mu,
            None => {
                let x_s = schedule::state_bound(stab, plant.sigma_w, n, horizon, cfg.t_w, delta);
                schedule::default_regularizer(stab, x_s)
            }
        };
        if let Some(v) = self.tau0 {
            cfg.tau0 = v;
        }
        if let Some(v) = self.sigma_nu {
            cfg.sigma_nu = v;
        }
        if let Some(v) = self.radius {
            cfg.radius = v;
        }
        if let Some(v) = self.radius_scale {
            cfg.radius_scale = v;
        }
        if let Some(v) = self.max_attempts {
            cfg.sampling.max_attempts = v;
        }
        if let Some(v) = self.scale_levels {
            cfg.sampling.scale_levels = v;
        }
        cfg.sampling.dare = DareOptions::with_sigma(plant.sigma_w);
        cfg.pgd = PgdConfig {
            iterations: self.pgd_iterations.unwrap_or(cfg.pgd.iterations),
            step_scale: self.pgd_step_scale.unwrap_or(cfg.pgd.step_scale),
            gradient: match self.pgd_fd_step {
                Some(step) => GradientMode::FiniteDifference { step },
                None => GradientMode::Analytic,
            },
        };
        if let Some(v) = self.det_doubling {
            cfg.det_doubling = v;
        }
        if let Some(Algorithm::TsLqr) = self.algorithm {
            cfg.t_w = 0;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidConfig(format!("plant.{name} must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl PlantSpec {
    pub fn builtin(name: &str) -> Self {
        Self {
            builtin: Some(name.into()),
            ..Self::default()
        }
    }

    /// The plant and, for builtins, its default admissible-set parameters.
    pub fn resolve(&self) -> Result<(PlantConfig, Option<StabilizabilityParams>)> {
        let (mut plant, stab) = match self.builtin.as_deref() {
            Some("boeing747") | Some("boeing") => (sim::boeing_plant(), Some(sim::boeing_stabilizability())),
            Some("scalar") => (sim::scalar_plant(), Some(sim::scalar_stabilizability())),
            Some(other) => {
                return Err(Error::InvalidConfig(format!(
                    "unknown builtin plant '{other}' (expected boeing747 or scalar)"
                )))
            }
            None => {
                let a = matrix(self.a.as_deref().ok_or_else(|| missing("a"))?, "a")?;
                let b = matrix(self.b.as_deref().ok_or_else(|| missing("b"))?, "b")?;
                let sys = SystemParams::new(a, b)?;
                let cost = CostMatrices::identity(sys.n(), sys.d());
                (PlantConfig::new(sys, cost, 1.0, 0)?, None)
            }
        };
        if self.builtin.is_some() && (self.a.is_some() || self.b.is_some()) {
            return Err(Error::InvalidConfig("plant: give either builtin or a/b, not both".into()));
        }
        if let Some(q) = &self.q {
            plant.cost = CostMatrices::new(matrix(q, "q")?, plant.cost.r.clone())?;
        }
        if let Some(r) = &self.r {
            plant.cost = CostMatrices::new(plant.cost.q.clone(), matrix(r, "r")?)?;
        }
        if let Some(s) = self.sigma_w {
            plant.sigma_w = s;
        }
        if let Some(x0) = &self.x0 {
            plant.x0 = DVector::from_column_slice(x0);
        }
        plant.validate()?;
        Ok((plant, stab))
    }
}

fn missing(field: &str) -> Error {
    Error::InvalidConfig(format!("plant.{field} is required without a builtin"))
}

impl BenchConfig {
    pub fn from_toml_str(text: &str, path: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: path.into(),
            message: e.to_string().trim_end().replace('\n', " "),
        })?;
        cfg.validate().map_err(|e| match e {
            Error::InvalidConfig(message) => Error::Config {
                path: path.into(),
                message,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// A Boeing or scalar protocol with the given controllers.
    pub fn builtin(plant: &str, algorithms: &[Algorithm]) -> Self {
        Self {
            runs: default_runs(),
            horizon: default_horizon(),
            base_seed: 0,
            paired_seeds: true,
            threads: 0,
            step_traces: true,
            output_dir: None,
            plant: PlantSpec::builtin(plant),
            stabilizability: None,
            diagnostics: Diagnostics::default(),
            defaults: ControllerSpec::default(),
            controllers: algorithms.iter().map(|&a| ControllerSpec::for_algorithm(a)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.controllers.is_empty() {
            return bad("controllers must not be empty");
        }
        let mut labels = std::collections::BTreeSet::new();
        for (i, c) in self.controllers.iter().enumerate() {
            let merged = c.merged(&self.defaults);
            if merged.algorithm.is_none() {
                return Err(Error::InvalidConfig(format!("controllers[{i}].algorithm is missing")));
            }
            if !labels.insert(merged.label()) {
                return Err(Error::InvalidConfig(format!(
                    "controllers[{i}]: duplicate label '{}'",
                    merged.label()
                )));
            }
        }
        let (plant, stab) = self.plant.resolve()?;
        let stab = self.stabilizability.or(stab).ok_or_else(|| {
            Error::InvalidConfig("stabilizability section is required for inline plants".into())
        })?;
        stab.validate()?;
        for c in &self.controllers {
            c.merged(&self.defaults).build(&plant, &stab, self.horizon)?;
        }
        Ok(())
    }

    /// Plant, admissible-set parameters and `(label, algorithm, config)` per
    /// controller.
    pub fn resolve(&self) -> Result<ResolvedBench> {
        self.validate()?;
        let (plant, builtin_stab) = self.plant.resolve()?;
        let stab = self.stabilizability.or(builtin_stab).expect("validated");
        let controllers = self
            .controllers
            .iter()
            .map(|c| {
                let m = c.merged(&self.defaults);
                let cfg = m.build(&plant, &stab, self.horizon)?;
                Ok(ResolvedController {
                    label: m.label(),
                    algorithm: m.algorithm.expect("validated"),
                    config: cfg,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ResolvedBench {
            plant,
            stab,
            controllers,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedController {
    pub label: String,
    pub algorithm: Algorithm,
    pub config: TsacConfig,
}

#[derive(Debug, Clone)]
pub struct ResolvedBench {
    pub plant: PlantConfig,
    pub stab: StabilizabilityParams,
    pub controllers: Vec<ResolvedController>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
runs = 3
horizon = 50
base_seed = 7

[plant]
builtin = "boeing747"

[defaults]
tau0 = 10
mu = 1.0

[[controllers]]
algorithm = "tsac"
t_w = 20

[[controllers]]
algorithm = "ts-lqr"

[[controllers]]
algorithm = "ofulq"
label = "ofu-fd"
pgd_fd_step = 1e-5
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = BenchConfig::from_toml_str(SAMPLE, "sample.toml").unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.controllers.len(), 3);
        assert_eq!(r.controllers[0].config.t_w, 20);
        assert_eq!(r.controllers[0].config.tau0, 10);
        assert_eq!(r.controllers[1].config.t_w, 0);
        assert_eq!(r.controllers[2].label, "ofu-fd");
        assert_eq!(
            r.controllers[2].config.pgd.gradient,
            GradientMode::FiniteDifference { step: 1e-5 }
        );
        assert_eq!(r.stab, sim::boeing_stabilizability());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = BenchConfig::from_toml_str(SAMPLE, "sample.toml").unwrap();
        let again = BenchConfig::from_toml_str(&cfg.to_toml_string(), "again.toml").unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn inline_plant() {
        let text = r#"
[plant]
a = [[0.9]]
b = [[1.0]]
sigma_w = 0.5
[stabilizability]
kappa = 2.0
gamma = 0.05
s_bound = 5.0
[[controllers]]
algorithm = "cec"
"#;
        let r = BenchConfig::from_toml_str(text, "inline.toml").unwrap().resolve().unwrap();
        assert_eq!(r.plant.sigma_w, 0.5);
        assert_eq!(r.plant.sys.a[(0, 0)], 0.9);
    }

    #[test]
    fn errors_name_the_problem() {
        let err = BenchConfig::from_toml_str("runs = 0\n[plant]\nbuiltin = \"scalar\"\n[[controllers]]\nalgorithm = \"tsac\"\n", "x.toml")
            .unwrap_err();
        assert!(err.to_string().contains("runs"), "{err}");
        assert_eq!(err.exit_code(), 2);

        let err = BenchConfig::from_toml_str("[plant]\nbuiltin = \"scalar\"\nbogus = 1\n[[controllers]]\nalgorithm = \"tsac\"\n", "x.toml")
            .unwrap_err();
        assert!(err.to_string().contains("bogus") && err.to_string().contains("line"), "{err}");

        let err = BenchConfig::from_toml_str("[plant]\nbuiltin = \"scalar\"\ncontrollers = []\n", "x.toml").unwrap_err();
        assert_eq!(err.exit_code(), 2);

        let err = BenchConfig::from_toml_str("[plant]\nbuiltin = \"mars\"\n[[controllers]]\nalgorithm = \"tsac\"\n", "x.toml")
            .unwrap_err();
        assert!(err.to_string().contains("mars"));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let text = "[plant]\nbuiltin = \"scalar\"\n[[controllers]]\nalgorithm = \"tsac\"\n[[controllers]]\nalgorithm = \"tsac\"\n";
        assert!(BenchConfig::from_toml_str(text, "x.toml").is_err());
    }

    #[test]
    fn default_regularizer_uses_final_exploration() {
        let (plant, stab) = PlantSpec::builtin("scalar").resolve().unwrap();
        let stab = stab.unwrap();
        let spec = ControllerSpec {
            t_w: Some(100),
            ..ControllerSpec::for_algorithm(Algorithm::Tsac)
        };
        let cfg = spec.build(&plant, &stab, 1000).unwrap();
        let x_s = schedule::state_bound(&stab, 1.0, 1, 1000, 100, DEFAULT_DELTA);
        assert!((cfg.mu - schedule::default_regularizer(&stab, x_s)).abs() < 1e-9);
    }
}
