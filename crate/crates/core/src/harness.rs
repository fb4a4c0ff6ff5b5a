//! Closed-loop scenarios, metrics and CSV output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aero::{AeroError, AeroSurface};
use crate::envelope::{EnvelopeError, EnvelopeOptions, PwaEnvelope};
use crate::mpc::{Controller, Measurement, MpcConfig, MpcError, StepReport, Strategy};
use crate::qp::QpStatus;
use crate::turbine::{self, PlantState, TurbineError, TurbineParams};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Aero(#[from] AeroError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Turbine(#[from] TurbineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Column layout version, written to `format.txt` next to the CSV files.
pub const CSV_VERSION: u32 = 1;

fn write_format(dir: &Path) -> Result<(), HarnessError> {
    let path = dir.join("format.txt");
    fs::write(&path, format!("downreg-csv v{CSV_VERSION}\n")).map_err(io_err(&path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerUnits {
    /// Values are watts.
    Watts,
    /// Values are fractions of the largest envelope power at the initial wind.
    #[default]
    AvailableFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceSpec {
    Step {
        before: f64,
        after: f64,
        at: f64,
    },
    Ramp {
        before: f64,
        after: f64,
        start: f64,
        duration: f64,
    },
    /// Piecewise-linear through `(t, value)` knots, held outside.
    Profile {
        points: Vec<[f64; 2]>,
    },
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec::Ramp {
            before: 0.75,
            after: 1.25,
            start: 300.0,
            duration: 10.0,
        }
    }
}

/// Piecewise-linear schedule, right-continuous at repeated knot times.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    knots: Vec<(f64, f64)>,
}

impl Schedule {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, HarnessError> {
        if knots.is_empty() {
            return Err(HarnessError::Config(
                "schedule needs at least one knot".into(),
            ));
        }
        if knots.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(HarnessError::Config("schedule knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(HarnessError::Config(
                "schedule times must be non-decreasing".into(),
            ));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        let after = k.partition_point(|&(kt, _)| kt <= t);
        if after == 0 {
            return k[0].1;
        }
        if after == k.len() {
            return k[k.len() - 1].1;
        }
        let (t0, v0) = k[after - 1];
        let (t1, v1) = k[after];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Values at `t0 + i·ts` for `i < n`.
    pub fn sample(&self, t0: f64, ts: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.eval(t0 + i as f64 * ts)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            knots: self.knots.iter().map(|&(t, v)| (t, v * factor)).collect(),
        }
    }
}

/// Schedule of a reference kind, in the units of its parameters.
pub fn reference_signal(spec: &ReferenceSpec) -> Result<Schedule, HarnessError> {
    match *spec {
        ReferenceSpec::Step { before, after, at } => Schedule::new(vec![(at, before), (at, after)]),
        ReferenceSpec::Ramp {
            before,
            after,
            start,
            duration,
        } => {
            if !(duration > 0.0) {
                return Err(HarnessError::Config(
                    "ramp duration must be positive".into(),
                ));
            }
            Schedule::new(vec![(start, before), (start + duration, after)])
        }
        ReferenceSpec::Profile { ref points } => {
            Schedule::new(points.iter().map(|p| (p[0], p[1])).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindSpec {
    /// Mean speed, m/s.
    pub speed: f64,
    /// Optional `(t, v)` knots replacing the constant speed.
    pub series: Option<Vec<[f64; 2]>>,
    /// Standard deviation of the seeded fluctuation as a fraction of the mean.
    pub turbulence: f64,
    /// Correlation time of the fluctuation, s.
    pub turbulence_time: f64,
}

impl Default for WindSpec {
    fn default() -> Self {
        Self {
            speed: 8.0,
            series: None,
            turbulence: 0.0,
            turbulence_time: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub wind: WindSpec,
    pub reference: ReferenceSpec,
    pub units: PowerUnits,
    pub t_end: f64,
    pub saturation_time: f64,
    pub seed: u64,
    /// Plant integration step, s.
    pub plant_dt: f64,
    /// Start of the "before saturation" averaging window, s.
    pub settling_time: f64,
    /// Relative tracking tolerance.
    pub tracking_tol: f64,
    /// Initial tip-speed ratio; defaults to the controller's optimum.
    pub initial_tsr: Option<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            wind: WindSpec::default(),
            reference: ReferenceSpec::default(),
            units: PowerUnits::AvailableFraction,
            t_end: 600.0,
            saturation_time: 300.0,
            seed: 0,
            plant_dt: 0.01,
            settling_time: 60.0,
            tracking_tol: 0.02,
            initial_tsr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeroConfig {
    /// Coefficient table file; the parametric surface is used when absent.
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub envelope_cache: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            envelope_cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub turbine: TurbineParams,
    pub aero: AeroConfig,
    pub envelope: EnvelopeOptions,
    pub mpc: MpcConfig,
    pub scenario: Scenario,
    pub output: OutputConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Config = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = cfg.aero.table.as_mut() {
            rebase(t);
        }
        if let Some(c) = cfg.output.envelope_cache.as_mut() {
            rebase(c);
        }
        rebase(&mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.turbine.validate()?;
        self.envelope.validate()?;
        self.mpc.validate()?;
        let s = &self.scenario;
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if !(s.t_end > s.saturation_time && s.saturation_time > 0.0) {
            return bad("need t_end > saturation_time > 0");
        }
        if !(s.plant_dt > 0.0) {
            return bad("plant_dt must be positive");
        }
        let ratio = self.mpc.ts / s.plant_dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio.round() < 1.0 {
            return bad("controller ts must be a whole multiple of plant_dt");
        }
        if !(s.settling_time >= 0.0 && s.settling_time < s.saturation_time) {
            return bad("settling_time must lie in [0, saturation_time)");
        }
        if !(s.tracking_tol > 0.0) {
            return bad("tracking_tol must be positive");
        }
        if !(s.wind.speed > 0.0 && s.wind.turbulence >= 0.0 && s.wind.turbulence_time > 0.0) {
            return bad("wind speed and turbulence time must be positive");
        }
        if let Some(series) = &s.wind.series {
            let sched = Schedule::new(series.iter().map(|p| (p[0], p[1])).collect())?;
            if sched.knots().iter().any(|k| !(k.1 > 0.0)) {
                return bad("wind series must be positive");
            }
        }
        let sched = reference_signal(&s.reference)?;
        if sched.knots().iter().any(|k| k.1 < 0.0) {
            return bad("reference power must be non-negative");
        }
        if s.units == PowerUnits::Watts
            && sched
                .knots()
                .iter()
                .any(|k| k.1 > self.turbine.power_g_rated)
        {
            return bad("reference power exceeds rated power");
        }
        Ok(())
    }
}

/// Surface and envelope shared by all runs of a configuration.
pub struct Model {
    pub params: TurbineParams,
    pub surface: AeroSurface,
    pub envelope: PwaEnvelope,
}

impl Model {
    pub fn load(cfg: &Config) -> Result<Self, HarnessError> {
        let surface = match &cfg.aero.table {
            Some(p) => AeroSurface::from_table_file(p)?,
            None => AeroSurface::parametric_default(),
        };
        let envelope = match &cfg.output.envelope_cache {
            Some(p) => PwaEnvelope::load_or_build(p, &cfg.turbine, &surface, &cfg.envelope)?,
            None => PwaEnvelope::build(&cfg.turbine, &surface, &cfg.envelope)?,
        };
        Ok(Self {
            params: cfg.turbine.clone(),
            surface,
            envelope,
        })
    }
}

/// Wind speed over time, including the seeded fluctuation.
pub struct WindField {
    base: Schedule,
    noise: Vec<f64>,
    dt: f64,
}

impl WindField {
    pub fn new(spec: &WindSpec, seed: u64, t_end: f64, dt: f64) -> Result<Self, HarnessError> {
        let base = match &spec.series {
            Some(s) => Schedule::new(s.iter().map(|p| (p[0], p[1])).collect())?,
            None => Schedule::new(vec![(0.0, spec.speed)])?,
        };
        let mut noise = Vec::new();
        if spec.turbulence > 0.0 {
            // First-order Gauss–Markov process sampled at `dt`.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = (-dt / spec.turbulence_time).exp();
            let b = (1.0 - a * a).sqrt();
            let n = (t_end / dt).ceil() as usize + 2;
            let mut x = 0.0;
            for _ in 0..n {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = a * x + b * e;
                noise.push(spec.turbulence * x);
            }
        }
        Ok(Self { base, noise, dt })
    }

    pub fn at(&self, t: f64) -> f64 {
        let v = self.base.eval(t);
        if self.noise.is_empty() {
            return v;
        }
        let i = ((t / self.dt).round() as usize).min(self.noise.len() - 1);
        v * (1.0 + self.noise[i])
    }
}

/// One controller-rate sample of the closed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub v: f64,
    pub omega_g: f64,
    pub k: f64,
    pub theta: f64,
    pub theta_cmd: f64,
    pub torque_g: f64,
    pub p_r: f64,
    pub p_g: f64,
    pub p_ref: f64,
    pub p_av_hat: f64,
    pub thrust: f64,
    pub tsr: f64,
    /// ∂C_Q/∂θ at the realized operating point.
    pub dcq_dtheta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub status: String,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub worst_violation: f64,
    pub feasible: bool,
    pub strategy_term: f64,
    pub stall_slack: f64,
    pub degraded: bool,
    pub authority_lost: bool,
    pub plan_p_r: f64,
    pub plan_p_g: f64,
}

impl DiagnosticRow {
    fn new(t: f64, r: &StepReport) -> Self {
        let status = match r.status {
            Some(QpStatus::Optimal) => "optimal",
            Some(QpStatus::MaxIter) => "max-iter",
            Some(QpStatus::Infeasible) => "infeasible",
            None => "not-posed",
        };
        Self {
            t,
            status: status.into(),
            iterations: r.iterations,
            kkt_residual: r.kkt_residual,
            worst_violation: r.worst_violation,
            feasible: r.feasible,
            strategy_term: r.strategy_term,
            stall_slack: r.stall_slack,
            degraded: r.degraded,
            authority_lost: r.authority_lost,
            plan_p_r: r.p_r,
            plan_p_g: r.p_g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub strategy: String,
    pub mean_k_before: f64,
    pub mean_thrust_before: f64,
    pub tracking_time_after_saturation: f64,
    pub tracking_rmse_before: f64,
    /// Largest relative tracking error in the settled window before saturation.
    pub max_tracking_error_before: f64,
    /// Controller steps with ω_g more than 0.5 % outside its limits.
    pub constraint_violation_count: usize,
    /// Steps after saturation with `P_g > P̂_av` while K decreases.
    pub overshoot_steps: usize,
    /// Largest realized ∂C_Q/∂θ over the run.
    pub max_dcq_dtheta: f64,
    pub degraded_steps: usize,
    pub energy_residual: f64,
    pub energy_residual_rel: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub strategy: Strategy,
    pub samples: Vec<Sample>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub metrics: SimMetrics,
    /// `∫(P_r − P_g/η) dt` at the plant rate, J.
    pub energy_integral: f64,
    pub energy_change: f64,
    /// Envelope maximum that scales fractional references, W.
    pub p_av_max: f64,
}

/// Largest τ with the relative tracking error within `tol` on every sample in
/// `[saturation_time, saturation_time + τ]`.
pub fn tracking_time_after_saturation(
    series: &[(f64, f64, f64)],
    saturation_time: f64,
    tol: f64,
) -> f64 {
    let mut last_ok = None;
    for &(t, p_g, p_ref) in series.iter().filter(|s| s.0 >= saturation_time) {
        let err = (p_g - p_ref).abs() / p_ref.abs().max(1.0);
        if err > tol {
            break;
        }
        last_ok = Some(t);
    }
    last_ok.map_or(0.0, |t| t - saturation_time)
}

/// Metrics of a recorded run. Means cover `[settling_time, saturation_time)`.
pub fn summarize(
    samples: &[Sample],
    params: &TurbineParams,
    scenario: &Scenario,
    strategy: Strategy,
) -> SimMetrics {
    let before: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.t >= scenario.settling_time && s.t < scenario.saturation_time)
        .collect();
    let mean = |f: &dyn Fn(&Sample) -> f64| {
        if before.is_empty() {
            0.0
        } else {
            before.iter().map(|s| f(s)).sum::<f64>() / before.len() as f64
        }
    };
    let rel = |s: &Sample| (s.p_g - s.p_ref).abs() / s.p_ref.abs().max(1.0);
    let series: Vec<(f64, f64, f64)> = samples.iter().map(|s| (s.t, s.p_g, s.p_ref)).collect();
    let (lo, hi) = (
        params.omega_g_min * (1.0 - 0.005),
        params.omega_g_max * (1.0 + 0.005),
    );
    let overshoot_steps = samples
        .windows(2)
        .filter(|w| {
            w[0].t >= scenario.saturation_time && w[0].p_g > w[0].p_av_hat && w[1].k < w[0].k
        })
        .count();
    SimMetrics {
        strategy: strategy.name().into(),
        mean_k_before: mean(&|s| s.k),
        mean_thrust_before: mean(&|s| s.thrust),
        tracking_time_after_saturation: tracking_time_after_saturation(
            &series,
            scenario.saturation_time,
            scenario.tracking_tol,
        ),
        tracking_rmse_before: mean(&|s| (s.p_g - s.p_ref).powi(2)).sqrt(),
        max_tracking_error_before: before.iter().map(|s| rel(s)).fold(0.0, f64::max),
        constraint_violation_count: samples
            .iter()
            .filter(|s| s.omega_g < lo || s.omega_g > hi)
            .count(),
        overshoot_steps,
        max_dcq_dtheta: samples
            .iter()
            .map(|s| s.dcq_dtheta)
            .fold(f64::NEG_INFINITY, f64::max),
        degraded_steps: 0,
        energy_residual: 0.0,
        energy_residual_rel: 0.0,
    }
}

/// Operating point with tip-speed ratio `tsr` delivering `p_g` at wind `v`.
pub fn initial_state(
    params: &TurbineParams,
    surface: &AeroSurface,
    v: f64,
    tsr: f64,
    p_g: f64,
) -> Result<PlantState, HarnessError> {
    let omega_g = params
        .omega_for_tsr(tsr, v)
        .clamp(params.omega_g_min, params.omega_g_max);
    let lambda = params.tip_speed_ratio(omega_g, v);
    let cp = p_g / params.eta_g / params.wind_factor(v, 3);
    let theta = match surface.pitch_from_cp(cp, lambda) {
        Ok(t) => t,
        Err(AeroError::Unachievable { .. }) => surface.max_cp_at(lambda)?.0,
        Err(e) => return Err(e.into()),
    };
    Ok(PlantState {
        omega_g,
        theta: theta.clamp(params.theta_min, params.theta_max),
        t: 0.0,
    })
}

/// Reference schedule in watts.
pub fn reference_watts(cfg: &Config, model: &Model) -> Result<(Schedule, f64), HarnessError> {
    let wind0 = WindField::new(
        &cfg.scenario.wind,
        cfg.scenario.seed,
        0.0,
        cfg.scenario.plant_dt,
    )?
    .base
    .eval(0.0);
    let p_av_max = model.envelope.max_over_k(wind0)?;
    let sched = reference_signal(&cfg.scenario.reference)?;
    let sched = match cfg.scenario.units {
        PowerUnits::Watts => sched,
        PowerUnits::AvailableFraction => sched.scaled(p_av_max),
    };
    if sched
        .knots()
        .iter()
        .any(|k| k.1 > model.params.power_g_rated * (1.0 + 1e-12))
    {
        return Err(HarnessError::Config(
            "reference power exceeds rated power".into(),
        ));
    }
    Ok((sched, p_av_max))
}

/// Deterministic closed loop: plant at `plant_dt`, controller every `ts`.
pub fn run_scenario(
    cfg: &Config,
    model: &Model,
    strategy: Strategy,
) -> Result<RunResult, HarnessError> {
    cfg.validate()?;
    let (params, surface, envelope) = (&model.params, &model.surface, &model.envelope);
    let sc = &cfg.scenario;
    let mpc = MpcConfig {
        strategy,
        ..cfg.mpc.clone()
    };
    let dt = sc.plant_dt;
    let per_control = (mpc.ts / dt).round() as usize;
    let n_plant = (sc.t_end / dt).round() as usize;
    let n_horizon = mpc.steps();

    let wind = WindField::new(&sc.wind, sc.seed, sc.t_end + mpc.horizon, dt)?;
    let (p_ref, p_av_max) = reference_watts(cfg, model)?;
    let lambda_opt = mpc.lambda_opt.unwrap_or_else(|| surface.optimum().0);
    let v0 = wind.at(0.0);
    let mut state = initial_state(
        params,
        surface,
        v0,
        sc.initial_tsr.unwrap_or(lambda_opt),
        p_ref.eval(0.0),
    )?;
    let mut ctrl = Controller::new(params, surface, envelope, mpc.clone(), &state, v0)?;

    let mut samples = Vec::with_capacity(n_plant / per_control + 1);
    let mut diagnostics = Vec::with_capacity(n_plant / per_control + 1);
    let k_start = params.kinetic_energy(state.omega_g);
    let mut integral = 0.0;
    let mut command = ctrl.command();
    let imbalance = |st: &PlantState, v: f64, torque: f64| -> Result<f64, HarnessError> {
        let pr = turbine::rotor_power(params, surface, v, st.omega_g, st.theta)?;
        Ok(pr - turbine::generator_power(params, torque, st.omega_g) / params.eta_g)
    };

    for step in 0..=n_plant {
        let t = step as f64 * dt;
        let v = wind.at(t);
        if step % per_control == 0 {
            let k = params.kinetic_energy(state.omega_g);
            let preview: Vec<f64> = (0..n_horizon)
                .map(|i| wind.at(t + i as f64 * mpc.ts))
                .collect();
            let refs = p_ref.sample(t, mpc.ts, n_horizon);
            let m = Measurement {
                k,
                theta: state.theta,
                v,
            };
            let report = ctrl.step(&m, &refs, Some(&preview));
            command = report.command.clamped(params);
            diagnostics.push(DiagnosticRow::new(t, &report));
            let lambda = params.tip_speed_ratio(state.omega_g, v);
            samples.push(Sample {
                t,
                v,
                omega_g: state.omega_g,
                k,
                theta: state.theta,
                theta_cmd: command.theta_cmd,
                torque_g: command.torque_g,
                p_r: turbine::rotor_power(params, surface, v, state.omega_g, state.theta)?,
                p_g: turbine::generator_power(params, command.torque_g, state.omega_g),
                p_ref: refs[0],
                p_av_hat: envelope
                    .eval(v, k.clamp(envelope.k_range.0, envelope.k_range.1))
                    .unwrap_or(f64::NAN),
                thrust: turbine::thrust(params, surface, v, state.omega_g, state.theta)?,
                tsr: lambda,
                dcq_dtheta: surface.partials(lambda, state.theta)?.dcq_dtheta,
            });
        }
        if step == n_plant {
            break;
        }
        let f0 = imbalance(&state, v, command.torque_g)?;
        let next = turbine::step(params, surface, &state, &command, v, dt)?;
        let f1 = imbalance(&next, v, command.torque_g)?;
        integral += 0.5 * dt * (f0 + f1);
        state = next;
    }

    let energy_change = params.kinetic_energy(state.omega_g) - k_start;
    let mut metrics = summarize(&samples, params, sc, strategy);
    metrics.degraded_steps = ctrl.diagnostics().degraded_steps;
    metrics.energy_residual = (energy_change - integral).abs();
    metrics.energy_residual_rel = metrics.energy_residual / energy_change.abs().max(k_start);
    Ok(RunResult {
        strategy,
        samples,
        diagnostics,
        metrics,
        energy_integral: integral,
        energy_change,
        p_av_max,
    })
}

/// Runs several strategies in parallel; results keep the input order.
pub fn run_batch(
    cfg: &Config,
    model: &Model,
    strategies: &[Strategy],
) -> Result<Vec<RunResult>, HarnessError> {
    strategies
        .par_iter()
        .map(|&s| run_scenario(cfg, model, s))
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes `run.csv` and `diagnostics.csv` into `dir`.
pub fn write_run(dir: &Path, run: &RunResult) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_rows(&dir.join("run.csv"), &run.samples)?;
    write_rows(&dir.join("diagnostics.csv"), &run.diagnostics)?;
    write_format(dir)
}

/// Writes every run into `<dir>/<strategy>/` plus a combined `metrics.csv`.
pub fn write_batch(dir: &Path, runs: &[RunResult]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for r in runs {
        write_run(&dir.join(r.strategy.name()), r)?;
    }
    let metrics: Vec<&SimMetrics> = runs.iter().map(|r| &r.metrics).collect();
    write_rows(&dir.join("metrics.csv"), &metrics)?;
    write_format(dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Power,
    StallMap,
    Loads,
}

impl std::str::FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "power" => Ok(Figure::Power),
            "stallmap" | "stall-map" => Ok(Figure::StallMap),
            "loads" => Ok(Figure::Loads),
            _ => Err(format!("unknown figure '{s}' (power, stallmap, loads)")),
        }
    }
}

impl Figure {
    fn name(self) -> &'static str {
        match self {
            Figure::Power => "power",
            Figure::StallMap => "stallmap",
            Figure::Loads => "loads",
        }
    }

    fn series(self) -> &'static [&'static str] {
        match self {
            Figure::Power => &["p_g", "p_ref", "p_av_hat", "p_r"],
            Figure::StallMap => &["tsr", "theta", "dcq_dtheta"],
            Figure::Loads => &["thrust", "k"],
        }
    }
}

#[derive(Serialize)]
struct LongRow<'a> {
    t: f64,
    series: &'a str,
    value: f64,
}

/// Long-format `(t, series, value)` extract of `run.csv` for one figure.
pub fn plot_data(run_dir: &Path, figure: Figure) -> Result<PathBuf, HarnessError> {
    let src = run_dir.join("run.csv");
    let mut r = csv::Reader::from_path(&src)?;
    let samples: Vec<Sample> = r.deserialize().collect::<Result<_, _>>()?;
    let out = run_dir.join(format!("figure_{}.csv", figure.name()));
    let mut w = csv::Writer::from_path(&out)?;
    for s in &samples {
        for &name in figure.series() {
            let value = match name {
                "p_g" => s.p_g,
                "p_ref" => s.p_ref,
                "p_av_hat" => s.p_av_hat,
                "p_r" => s.p_r,
                "tsr" => s.tsr,
                "theta" => s.theta,
                "dcq_dtheta" => s.dcq_dtheta,
                "thrust" => s.thrust,
                _ => s.k,
            };
            w.serialize(LongRow {
                t: s.t,
                series: name,
                value,
            })?;
        }
    }
    w.flush().map_err(io_err(&out))?;
    Ok(out)
}
