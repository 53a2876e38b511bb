//! Command-line front end for the TSAC experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use tsac::control::{dare_residual, solve_dare, DareOptions};
use tsac::controllers::Algorithm;
use tsac::harness::{
    bench, fit_regret_slope, optimism_monte_carlo, read_step_csv, run_many, schedule_report, step_csv,
    write_atomic, write_json, BenchConfig, ControllerSpec, OptimismSpec, PlantSpec, RunSummary, TraceFormat,
};
use tsac::sim::Diagnostics;
use tsac::{closed_loop, membership_in_s, spectral_radius, Error, PlantConfig, Result, StabilizabilityParams};

#[derive(Parser)]
#[command(name = "tsac", version, about = "Thompson-sampling adaptive LQR experiments")]
struct Cli {
    /// Benchmark config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Per-step trace format; `json` also switches reports to JSON.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for TraceFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TraceFormat::Csv,
            Format::Json => TraceFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and emit its per-step trace.
    Run(RunArgs),
    /// Run the multi-seed benchmark protocol.
    Bench(BenchArgs),
    /// Solve the Riccati equation for a system.
    Dare(SystemArgs),
    /// Membership report and schedule quantities for a system.
    CheckSystem(CheckArgs),
    /// Monte-Carlo estimate of the optimism probability.
    Optimism(OptimismArgs),
    /// Fit the regret growth exponent from bench output.
    Slope(SlopeArgs),
}

/// System selection shared by the analysis subcommands. Without flags the
/// plant comes from `--config`, falling back to the Boeing 747 model.
#[derive(Args, Clone)]
struct SystemArgs {
    /// Builtin plant: boeing747 or scalar.
    #[arg(long, conflicts_with_all = ["a", "b"])]
    plant: Option<String>,
    /// Inline A as row-major JSON, e.g. '[[0.9]]'.
    #[arg(long, requires = "b")]
    a: Option<String>,
    #[arg(long, requires = "a")]
    b: Option<String>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    s_bound: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Algorithm to run when no config is given.
    #[arg(long, default_value = "tsac")]
    algorithm: Algorithm,
    /// Controller label to pick from the config (default: the first).
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Comma-separated algorithms when no config is given.
    #[arg(long, value_delimiter = ',', default_value = "tsac,ts-lqr,ofulq,stabl,cec")]
    algorithms: Vec<Algorithm>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Skip the per-step trace files.
    #[arg(long)]
    no_traces: bool,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long, default_value_t = 200)]
    horizon: usize,
}

#[derive(Args)]
struct OptimismArgs {
    #[command(flatten)]
    system: SystemArgs,
    /// Design-matrix scale: `V = λ I`.
    #[arg(long, default_value_t = 1e3)]
    lambda: f64,
    /// Ellipsoid radius; defaults to the confidence radius.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    draws: usize,
    /// Centre every draw at the true parameters.
    #[arg(long)]
    no_recentre: bool,
}

#[derive(Args)]
struct SlopeArgs {
    /// Bench output directory.
    dir: PathBuf,
    /// Controller labels to fit (default: every subdirectory with traces).
    #[arg(long)]
    label: Vec<String>,
    /// First step of the fit window (default: T/10).
    #[arg(long)]
    t_min: Option<usize>,
}

const INLINE_STAB: (f64, f64, f64) = (2.0, 0.05, 10.0);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(args) => run(cli, args),
        Command::Bench(args) => bench_cmd(cli, args),
        Command::Dare(args) => dare(cli, args),
        Command::CheckSystem(args) => check_system(cli, args),
        Command::Optimism(args) => optimism(cli, args),
        Command::Slope(args) => slope(cli, args),
    }
}

fn parse_matrix(text: &str, name: &str) -> Result<Vec<Vec<f64>>> {
    serde_json::from_str(text)
        .map_err(|e| Error::InvalidConfig(format!("--{name}: expected a nested JSON array ({e})")))
}

impl SystemArgs {
    fn plant_spec(&self) -> Result<Option<PlantSpec>> {
        if let Some(name) = &self.plant {
            return Ok(Some(PlantSpec::builtin(name)));
        }
        match (&self.a, &self.b) {
            (Some(a), Some(b)) => Ok(Some(PlantSpec {
                a: Some(parse_matrix(a, "a")?),
                b: Some(parse_matrix(b, "b")?),
                ..PlantSpec::default()
            })),
            _ => Ok(None),
        }
    }

    /// The config with any system flags applied on top.
    fn apply(&self, cfg: &mut BenchConfig) -> Result<()> {
        if let Some(spec) = self.plant_spec()? {
            let inline = spec.builtin.is_none();
            cfg.plant = spec;
            if inline && cfg.stabilizability.is_none() {
                let (k, g, s) = INLINE_STAB;
                cfg.stabilizability = Some(StabilizabilityParams { kappa: k, gamma: g, s_bound: s });
            }
        }
        if self.kappa.is_some() || self.gamma.is_some() || self.s_bound.is_some() {
            let base = match cfg.stabilizability {
                Some(s) => s,
                None => cfg.plant.resolve()?.1.unwrap_or(StabilizabilityParams {
                    kappa: INLINE_STAB.0,
                    gamma: INLINE_STAB.1,
                    s_bound: INLINE_STAB.2,
                }),
            };
            cfg.stabilizability = Some(StabilizabilityParams::new(
                self.kappa.unwrap_or(base.kappa),
                self.gamma.unwrap_or(base.gamma),
                self.s_bound.unwrap_or(base.s_bound),
            )?);
        }
        Ok(())
    }

    fn resolve(&self, cli: &Cli) -> Result<(PlantConfig, StabilizabilityParams)> {
        let mut cfg = base_config(cli, &[Algorithm::Tsac])?;
        self.apply(&mut cfg)?;
        let (plant, builtin) = cfg.plant.resolve()?;
        let stab = cfg.stabilizability.or(builtin).ok_or_else(|| {
            Error::InvalidConfig("no stabilizability parameters for this plant".into())
        })?;
        stab.validate()?;
        Ok((plant, stab))
    }
}

fn base_config(cli: &Cli, algorithms: &[Algorithm]) -> Result<BenchConfig> {
    let mut cfg = match &cli.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::builtin("boeing747", algorithms),
    };
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &BenchConfig) -> Option<PathBuf> {
    cli.out_dir.clone().or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::NumericalFailure(format!("serializing output: {e}")))?;
    println!("{text}");
    Ok(())
}

fn format_matrix(m: &DMatrix<f64>) -> String {
    (0..m.nrows())
        .map(|i| {
            let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:>14.6e}", m[(i, j)])).collect();
            format!("  [{}]", row.join(","))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn run(cli: &Cli, args: &RunArgs) -> Result<()> {
    let mut cfg = base_config(cli, &[args.algorithm])?;
    args.system.apply(&mut cfg)?;
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    cfg.diagnostics = Diagnostics::all();
    cfg.validate()?;
    let resolved = cfg.resolve()?;
    let ctrl = match &args.label {
        Some(label) => resolved
            .controllers
            .iter()
            .find(|c| &c.label == label)
            .ok_or_else(|| Error::InvalidConfig(format!("no controller labelled '{label}'")))?,
        None => &resolved.controllers[0],
    };
    let logs = run_many(
        &resolved.plant,
        &resolved.stab,
        ctrl.algorithm,
        &ctrl.config,
        cfg.horizon,
        &[cfg.base_seed],
        cfg.diagnostics,
        1,
    )?;
    let log = &logs[0];
    let summary = RunSummary::from_log(&ctrl.label, ctrl.algorithm, 0, &ctrl.config, log);
    match out_dir(cli, &cfg) {
        Some(dir) => {
            let steps = match cli.format {
                Format::Csv => {
                    let p = dir.join(format!("{}_steps.csv", ctrl.label));
                    write_atomic(&p, &step_csv(log)?)?;
                    p
                }
                Format::Json => {
                    let p = dir.join(format!("{}_steps.json", ctrl.label));
                    write_json(&p, &log.records)?;
                    p
                }
            };
            write_json(&dir.join(format!("{}_run.json", ctrl.label)), &summary)?;
            println!(
                "{}: regret {:.6e}, max |x| {:.6e}, diverged {} -> {}",
                ctrl.label,
                summary.regret,
                summary.max_state_norm,
                summary.diverged,
                steps.display()
            );
        }
        None => match cli.format {
            Format::Csv => print!("{}", String::from_utf8_lossy(&step_csv(log)?)),
            Format::Json => print_json(&log.records)?,
        },
    }
    Ok(())
}

fn bench_cmd(cli: &Cli, args: &BenchArgs) -> Result<()> {
    let mut cfg = base_config(cli, &args.algorithms)?;
    args.system.apply(&mut cfg)?;
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if args.no_traces {
        cfg.step_traces = false;
    }
    if cli.config.is_none() {
        cfg.diagnostics = Diagnostics::all();
    }
    let dir = out_dir(cli, &cfg).unwrap_or_else(|| PathBuf::from("results"));
    let outcome = bench(&cfg, Some(&dir), cli.format.into())?;
    if cli.format == Format::Json {
        return print_json(&outcome.summary);
    }
    println!(
        "{} runs x {} steps, J* = {:.6e}, output in {}",
        outcome.summary.runs,
        outcome.summary.horizon,
        outcome.summary.j_star,
        dir.display()
    );
    println!(
        "{:<12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>5} {:>7}",
        "controller", "regret", "top95", "top90", "max|x|", "top95", "top90", "div", "p_opt"
    );
    for (label, s) in &outcome.summary.controllers {
        let p_opt = s.p_opt.map_or("-".to_string(), |p| format!("{p:.3}"));
        println!(
            "{:<12} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>5} {:>7}",
            label,
            s.regret.average,
            s.regret.top95,
            s.regret.top90,
            s.max_state_norm.average,
            s.max_state_norm.top95,
            s.max_state_norm.top90,
            s.divergences,
            p_opt
        );
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct DareReport {
    p: DMatrix<f64>,
    k: DMatrix<f64>,
    j: f64,
    closed_loop_radius: f64,
    residual: f64,
    iterations: usize,
}

fn dare(cli: &Cli, args: &SystemArgs) -> Result<()> {
    let (plant, _) = args.resolve(cli)?;
    let sol = solve_dare(&plant.sys, &plant.cost, &DareOptions::with_sigma(plant.sigma_w))?;
    let report = DareReport {
        closed_loop_radius: spectral_radius(&closed_loop(&plant.sys, &sol.k)?)?,
        residual: dare_residual(&plant.sys, &plant.cost, &sol.p)?,
        j: sol.j,
        iterations: sol.iterations,
        p: sol.p,
        k: sol.k,
    };
    if cli.format == Format::Json {
        return print_json(&report);
    }
    println!("P =\n{}", format_matrix(&report.p));
    println!("K =\n{}", format_matrix(&report.k));
    println!("J = {:.10e}", report.j);
    println!("rho_cl = {:.10}", report.closed_loop_radius);
    println!("residual = {:.3e}", report.residual);
    println!("iterations = {}", report.iterations);
    Ok(())
}

#[derive(serde::Serialize)]
struct CheckReport {
    reason: String,
    frobenius_norm: f64,
    gain_norm: Option<f64>,
    closed_loop_radius: Option<f64>,
    kappa: f64,
    gamma: f64,
    s_bound: f64,
    schedule: tsac::schedule::ScheduleReport,
}

fn check_system(cli: &Cli, args: &CheckArgs) -> Result<()> {
    let (plant, stab) = args.system.resolve(cli)?;
    let m = membership_in_s(&plant.sys, &plant.cost, &stab)?;
    let tsac_cfg = ControllerSpec::for_algorithm(Algorithm::Tsac).build(&plant, &stab, args.horizon)?;
    let schedule = schedule_report(
        &plant.sys,
        &plant.cost,
        &stab,
        plant.sigma_w,
        args.horizon,
        tsac_cfg.t_w,
        tsac_cfg.mu,
        tsac_cfg.delta,
    )?;
    let report = CheckReport {
        reason: m.reason.to_string(),
        frobenius_norm: m.frobenius_norm,
        gain_norm: m.gain_norm,
        closed_loop_radius: m.closed_loop_radius,
        kappa: stab.kappa,
        gamma: stab.gamma,
        s_bound: stab.s_bound,
        schedule,
    };
    if cli.format == Format::Json {
        return print_json(&report);
    }
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    println!("membership: {}", report.reason);
    println!(
        "  |Theta|_F = {:.6} (S = {}), |K|_2 = {} (kappa = {}), rho_cl = {} (1 - gamma = {})",
        report.frobenius_norm,
        stab.s_bound,
        opt(report.gain_norm),
        stab.kappa,
        opt(report.closed_loop_radius),
        1.0 - stab.gamma
    );
    let s = &report.schedule;
    println!("schedule for T = {}:", args.horizon);
    println!("  tau0 = {}", s.tau0);
    println!("  t_w = {}", s.t_w);
    println!("  t_r = {}", s.t_r);
    println!("  X_s = {:.6e}", s.x_s);
    println!("  D = {:.6e}", s.p_bound);
    println!("  T0 = {:.6e}", s.t0);
    println!("  excitation start = {:.1}", s.excitation_start);
    Ok(())
}

fn optimism(cli: &Cli, args: &OptimismArgs) -> Result<()> {
    let (plant, stab) = args.system.resolve(cli)?;
    let spec = OptimismSpec {
        lambda: args.lambda,
        radius: args.radius,
        draws: args.draws,
        recentre: !args.no_recentre,
        ..OptimismSpec::default()
    };
    let report = optimism_monte_carlo(&plant, &stab, &spec, cli.seed.unwrap_or(0))?;
    if cli.format == Format::Json {
        return print_json(&report);
    }
    println!(
        "p_opt = {:.4} ({} of {} admissible draws, radius {:.4}); Q(1) = {:.4}",
        report.p_opt, report.optimistic, report.accepted, report.radius, report.q1
    );
    Ok(())
}

/// Cumulative-regret curve from one per-step trace file.
fn read_curve(path: &Path) -> Result<Vec<f64>> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let rows: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        rows.iter()
            .map(|r| {
                r["cum_regret"].as_f64().ok_or_else(|| Error::Config {
                    path: path.display().to_string(),
                    message: "record without cum_regret".into(),
                })
            })
            .collect()
    } else {
        Ok(read_step_csv(path)?.into_iter().map(|r| r.cum_regret).collect())
    }
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |source| Error::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        out.push(entry.map_err(io)?.path());
    }
    out.sort();
    Ok(out)
}

#[derive(serde::Serialize)]
struct SlopeReport {
    label: String,
    runs: usize,
    t_min: usize,
    fit: tsac::harness::SlopeFit,
}

fn slope(cli: &Cli, args: &SlopeArgs) -> Result<()> {
    let labels: Vec<String> = if args.label.is_empty() {
        list_dir(&args.dir)?
            .into_iter()
            .filter(|p| p.is_dir())
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    } else {
        args.label.clone()
    };
    let mut reports = Vec::new();
    for label in labels {
        let traces: Vec<PathBuf> = list_dir(&args.dir.join(&label))?
            .into_iter()
            .filter(|p| {
                p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("steps_"))
            })
            .collect();
        if traces.is_empty() {
            continue;
        }
        let curves = traces.iter().map(|p| read_curve(p)).collect::<Result<Vec<_>>>()?;
        let len = curves.iter().map(Vec::len).min().unwrap_or(0);
        let t_min = args.t_min.unwrap_or((len / 10).max(1));
        let fit = fit_regret_slope(&curves, t_min, cli.seed.unwrap_or(0))?;
        reports.push(SlopeReport {
            label,
            runs: curves.len(),
            t_min,
            fit,
        });
    }
    if reports.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no step traces under {}",
            args.dir.display()
        )));
    }
    if cli.format == Format::Json {
        return print_json(&reports);
    }
    for r in &reports {
        println!(
            "{}: slope {:.4} [{:.4}, {:.4}] over t in [{}, {}], {} runs, shift {}",
            r.label,
            r.fit.slope,
            r.fit.ci_low,
            r.fit.ci_high,
            r.t_min,
            r.t_min + r.fit.points - 1,
            r.runs,
            r.fit.shift
        );
    }
    Ok(())
}
