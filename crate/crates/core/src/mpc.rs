//! Receding-horizon down-regulation controller.
//!
//! Decision variables are scaled before they reach the solver: powers by
//! rated generator power, kinetic energy by `K_rated = J ω_g,rated² / 2`,
//! thrust by [`THRUST_SCALE`] and the stall slope by rated rotor torque. The
//! weights `α1..α7` therefore act on dimensionless quantities.
//!
//! Variables come in families of `N` entries each (one per horizon step), so a
//! previous solution can be shifted by one step for warm starting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aero::{AeroError, AeroSurface};
use crate::envelope::{torque_cut_grid, torque_limit_cuts, EnvelopeError, PwaEnvelope, Segment};
use crate::linearize::{self, AffineStall, AffineThrust, LinearizeError, K_EPS};
use crate::qp::{self, Duals, QpError, QpProblem, QpSettings, QpSolution, QpStatus, SparseMatrix};
use crate::turbine::{ActuatorCommand, PlantState, TurbineParams};

/// Thrust normalization in the MinThrust term, N.
pub const THRUST_SCALE: f64 = 1.0e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kinetic energy {0} J is too small to convert power to torque")]
    DegenerateK(f64),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Aero(#[from] AeroError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    MaxKineticEnergy,
    MinThrust,
    ConstantTipSpeedRatio,
    ConstantRotorSpeed,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::MaxKineticEnergy,
        Strategy::MinThrust,
        Strategy::ConstantTipSpeedRatio,
        Strategy::ConstantRotorSpeed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::MaxKineticEnergy => "max-kinetic-energy",
            Strategy::MinThrust => "min-thrust",
            Strategy::ConstantTipSpeedRatio => "constant-tip-speed-ratio",
            Strategy::ConstantRotorSpeed => "constant-rotor-speed",
        }
    }

    /// Which of `(α5, α6, α7)` the strategy keeps.
    pub fn mask(self) -> [bool; 3] {
        match self {
            Strategy::MaxKineticEnergy => [true, false, false],
            Strategy::ConstantTipSpeedRatio | Strategy::ConstantRotorSpeed => [false, true, false],
            Strategy::MinThrust => [false, false, true],
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == key)
            .or(match key.as_str() {
                "maxk" | "max-k" => Some(Strategy::MaxKineticEnergy),
                "minthrust" | "min-ct" => Some(Strategy::MinThrust),
                "ctsr" => Some(Strategy::ConstantTipSpeedRatio),
                "crs" => Some(Strategy::ConstantRotorSpeed),
                _ => None,
            })
            .ok_or_else(|| format!("unknown strategy '{s}'"))
    }
}

/// How the MinThrust term enters the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThrustForm {
    /// `α7 Σ F_extra` with `F̂_T ≤ F_extra`, `F_extra ≥ 0`.
    Epigraph,
    /// `α7 Σ (F̂_T / THRUST_SCALE)²`.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Table of `α1..α7`; entries the strategy does not use are masked out.
    pub alphas: [f64; 7],
    /// Horizon length, s.
    pub horizon: f64,
    /// Control sampling time, s.
    pub ts: f64,
    /// Stall margin, N·m/rad.
    pub delta: f64,
    pub strategy: Strategy,
    /// Defaults to the surface optimum when absent.
    pub lambda_opt: Option<f64>,
    /// Rotor-side speed setpoint of ConstantRotorSpeed, rad/s.
    pub omega_ref_const: f64,
    pub stall_constraint: bool,
    pub stall_penalty: f64,
    pub regularization: f64,
    pub thrust_form: ThrustForm,
    pub torque_cuts: usize,
    pub qp_max_iter: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            alphas: [10.0, 0.1, 0.1, 0.1, 0.1, 0.1, 0.01],
            horizon: 20.0,
            ts: 0.2,
            delta: 0.0,
            strategy: Strategy::MaxKineticEnergy,
            lambda_opt: None,
            omega_ref_const: 1.14,
            stall_constraint: true,
            stall_penalty: 1e6,
            regularization: 1e-9,
            thrust_form: ThrustForm::Epigraph,
            torque_cuts: 8,
            qp_max_iter: 4000,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: String| Err(MpcError::InvalidConfig(m));
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return bad(format!("ts must be positive, got {}", self.ts));
        }
        let ratio = self.horizon / self.ts;
        if !(ratio.is_finite()
            && (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0)
            && ratio.round() >= 2.0)
        {
            return bad(format!("horizon/ts must be an integer >= 2, got {ratio}"));
        }
        if self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("weights must be finite and non-negative".into());
        }
        if !(self.alphas[0] > 0.0) {
            return bad("alpha1 must be positive".into());
        }
        let w = self.weights();
        if w[4..].iter().filter(|a| **a > 0.0).count() != 1 {
            return bad(format!(
                "strategy {} needs its weight to be positive",
                self.strategy
            ));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad("delta must be non-negative".into());
        }
        if let Some(l) = self.lambda_opt {
            if !(l > 0.0 && l.is_finite()) {
                return bad("lambda_opt must be positive".into());
            }
        }
        if !(self.omega_ref_const > 0.0) {
            return bad("omega_ref_const must be positive".into());
        }
        if !(self.stall_penalty > 0.0 && self.regularization >= 0.0) {
            return bad("stall_penalty must be positive and regularization non-negative".into());
        }
        if self.torque_cuts < 2 {
            return bad("need at least two torque cuts".into());
        }
        if self.qp_max_iter == 0 {
            return bad("qp_max_iter must be positive".into());
        }
        Ok(())
    }

    /// Horizon length in steps.
    pub fn steps(&self) -> usize {
        (self.horizon / self.ts).round() as usize
    }

    /// `α1..α7` after applying the strategy mask.
    pub fn weights(&self) -> [f64; 7] {
        let mut w = self.alphas;
        for (i, keep) in self.strategy.mask().into_iter().enumerate() {
            if !keep {
                w[4 + i] = 0.0;
            }
        }
        w
    }
}

/// Kinetic-energy setpoint of the tracking strategies, J.
///
/// `lambda_opt` is used for ConstantTipSpeedRatio; other strategies get the
/// fixed rotor-speed setpoint.
pub fn kinetic_reference(params: &TurbineParams, cfg: &MpcConfig, lambda_opt: f64, v: f64) -> f64 {
    let omega_g = match cfg.strategy {
        Strategy::ConstantTipSpeedRatio => params.omega_for_tsr(lambda_opt, v),
        _ => cfg.omega_ref_const * params.gearbox_ratio,
    };
    params.kinetic_energy(omega_g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModels {
    pub thrust: AffineThrust,
    pub stall: AffineStall,
}

/// Everything [`build_problem`] needs besides the configuration.
#[derive(Debug, Clone)]
pub struct ProblemInputs<'a> {
    pub params: &'a TurbineParams,
    pub envelope: &'a PwaEnvelope,
    /// Tangent cuts of the torque-limited power curve.
    pub torque_cuts: &'a [Segment],
    /// Measured kinetic energy, J.
    pub k0: f64,
    /// Wind speed per horizon step, m/s.
    pub wind: &'a [f64],
    /// Reference generator power per horizon step, W.
    pub p_ref: &'a [f64],
    /// Powers applied at the previous step, W.
    pub prev_p_g: f64,
    pub prev_p_r: f64,
    /// Setpoint of the tracking strategies, J.
    pub k_ref: f64,
    /// Stall and thrust rows are left out when absent.
    pub models: Option<LinearModels>,
    /// Adds a penalized slack to the stall rows; otherwise they are hard.
    pub soften_stall: bool,
}

/// Variable families of the horizon problem. Entry `i` of family `f` is
/// variable `f·N + i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub steps: usize,
    pub families: Vec<Family>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    RotorPower,
    GeneratorPower,
    /// `K[i+1]`; `K[0]` is the measurement.
    Energy,
    StallSlack,
    ThrustExtra,
    Overage,
    /// Envelope values at the two bracketing wind grid points.
    EnvelopeLower,
    EnvelopeUpper,
}

impl Layout {
    pub fn n_vars(&self) -> usize {
        self.steps * self.families.len()
    }

    pub fn index(&self, family: Family, i: usize) -> Option<usize> {
        self.families
            .iter()
            .position(|f| *f == family)
            .map(|f| f * self.steps + i)
    }

    fn at(&self, family: Family, i: usize) -> usize {
        self.index(family, i).expect("family present in layout")
    }

    /// Previous solution moved one step forward, last entry repeated.
    pub fn shift(&self, z: &[f64]) -> Vec<f64> {
        shift_blocks(z, self.steps, z.len() / self.steps.max(1), false)
    }

    /// Multipliers moved one step forward. Constraint rows come in equal
    /// per-step blocks; bound multipliers follow the variable layout.
    pub fn shift_duals(&self, d: &Duals) -> Duals {
        let n = self.steps;
        Duals {
            eq: shift_blocks(&d.eq, n, d.eq.len() / n, true),
            ineq: shift_blocks(&d.ineq, n, d.ineq.len() / n, true),
            lower: self.shift(&d.lower),
            upper: self.shift(&d.upper),
        }
    }
}

/// Shifts `n` steps of width `w` by one step. Step-major blocks when
/// `step_major`, otherwise `w` families of `n` entries.
fn shift_blocks(x: &[f64], n: usize, w: usize, step_major: bool) -> Vec<f64> {
    let mut out = x.to_vec();
    if n * w != x.len() {
        return out;
    }
    for f in 0..w {
        for i in 0..n.saturating_sub(1) {
            let (to, from) = if step_major {
                (i * w + f, (i + 1) * w + f)
            } else {
                (f * n + i, f * n + i + 1)
            };
            out[to] = x[from];
        }
    }
    out
}

/// Normalization constants of the decision variables.
#[derive(Debug, Clone, Copy)]
struct Scales {
    power: f64,
    energy: f64,
    torque: f64,
}

impl Scales {
    fn new(params: &TurbineParams) -> Self {
        let omega_r = params.omega_g_rated / params.gearbox_ratio;
        Self {
            power: params.power_g_rated,
            energy: params.k_rated(),
            torque: params.power_g_rated / omega_r,
        }
    }
}

/// Solution of one horizon problem in physical units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HorizonPlan {
    pub p_r: Vec<f64>,
    pub p_g: Vec<f64>,
    /// `N + 1` entries starting with the measurement.
    pub k: Vec<f64>,
    pub overage: Vec<f64>,
    pub thrust_extra: Vec<f64>,
    /// Stall-slope violation absorbed by the slack, N·m/rad.
    pub stall_slack: Vec<f64>,
}

struct Builder {
    n: usize,
    h: Vec<(usize, usize, f64)>,
    g: Vec<f64>,
    eq: Vec<(usize, usize, f64)>,
    b_eq: Vec<f64>,
    ineq: Vec<(usize, usize, f64)>,
    b_in: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
}

impl Builder {
    fn new(n: usize) -> Self {
        Self {
            n,
            h: Vec::new(),
            g: vec![0.0; n],
            eq: Vec::new(),
            b_eq: Vec::new(),
            ineq: Vec::new(),
            b_in: Vec::new(),
            lb: vec![f64::NEG_INFINITY; n],
            ub: vec![f64::INFINITY; n],
        }
    }

    /// Adds `w (cᵀz + d)²` to the objective.
    fn square(&mut self, terms: &[(usize, f64)], d: f64, w: f64) {
        for &(i, ci) in terms {
            for &(j, cj) in terms {
                self.h.push((i, j, 2.0 * w * ci * cj));
            }
            self.g[i] += 2.0 * w * ci * d;
        }
    }

    /// `cᵀz + d ≤ 0`; terms on `K[0]` arrive as constants in `d`.
    fn le(&mut self, terms: &[(usize, f64)], d: f64) {
        let r = self.b_in.len();
        for &(i, c) in terms {
            self.ineq.push((r, i, c));
        }
        self.b_in.push(-d);
    }

    fn equal(&mut self, terms: &[(usize, f64)], d: f64) {
        let r = self.b_eq.len();
        for &(i, c) in terms {
            self.eq.push((r, i, c));
        }
        self.b_eq.push(-d);
    }

    fn finish(self) -> QpProblem {
        let n = self.n;
        QpProblem {
            h: SparseMatrix::from_triplets(n, n, &self.h),
            g: self.g,
            a_eq: SparseMatrix::from_triplets(self.b_eq.len(), n, &self.eq),
            b_eq: self.b_eq,
            a_in: SparseMatrix::from_triplets(self.b_in.len(), n, &self.ineq),
            b_in: self.b_in,
            lb: self.lb,
            ub: self.ub,
        }
    }
}

/// Scaled energy at step `i` as a linear term, or a constant for `i = 0`.
fn energy_term(layout: &Layout, k0: f64, i: usize, coeff: f64) -> (Option<(usize, f64)>, f64) {
    if i == 0 {
        (None, coeff * k0)
    } else {
        (Some((layout.at(Family::Energy, i - 1), coeff)), 0.0)
    }
}

fn push_opt(terms: &mut Vec<(usize, f64)>, t: Option<(usize, f64)>) {
    if let Some(t) = t {
        terms.push(t);
    }
}

/// Assembles the horizon QP.
pub fn build_problem(
    cfg: &MpcConfig,
    inputs: &ProblemInputs<'_>,
) -> Result<(QpProblem, Layout), MpcError> {
    cfg.validate()?;
    let n = cfg.steps();
    for len in [inputs.wind.len(), inputs.p_ref.len()] {
        if len != n {
            return Err(MpcError::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let params = inputs.params;
    let sc = Scales::new(params);
    let w = cfg.weights();
    let env = inputs.envelope;

    let brackets = inputs
        .wind
        .iter()
        .map(|&v| env.bracket(v))
        .collect::<Result<Vec<_>, _>>()?;
    let interpolate = brackets.iter().any(|b| b.lower != b.upper);
    let stall = cfg.stall_constraint && inputs.models.is_some();
    let thrust_epigraph =
        w[6] > 0.0 && cfg.thrust_form == ThrustForm::Epigraph && inputs.models.is_some();
    // With K_max ≤ K_rated the overage is identically zero.
    let overage = w[3] > 0.0 && params.k_max() > params.k_rated() * (1.0 + 1e-12);

    let mut families = vec![Family::RotorPower, Family::GeneratorPower, Family::Energy];
    if stall && inputs.soften_stall {
        families.push(Family::StallSlack);
    }
    if thrust_epigraph {
        families.push(Family::ThrustExtra);
    }
    if overage {
        families.push(Family::Overage);
    }
    if interpolate {
        families.extend([Family::EnvelopeLower, Family::EnvelopeUpper]);
    }
    let layout = Layout { steps: n, families };
    let mut b = Builder::new(layout.n_vars());

    let k0 = inputs.k0 / sc.energy;
    let dyn_gain = cfg.ts * sc.power / sc.energy;
    let eta = params.eta_g;
    let k_lo = params.k_min() / sc.energy;
    let k_hi = params.k_max() / sc.energy;
    let k_ref = inputs.k_ref / sc.energy;

    for i in 0..n {
        let pr = layout.at(Family::RotorPower, i);
        let pg = layout.at(Family::GeneratorPower, i);
        let kn = layout.at(Family::Energy, i);

        // Tracking and rate terms.
        b.square(&[(pg, 1.0)], -inputs.p_ref[i] / sc.power, w[0]);
        let rate = 1.0 / (cfg.ts * cfg.ts);
        if i == 0 {
            b.square(&[(pg, 1.0)], -inputs.prev_p_g / sc.power, w[1] * rate);
            b.square(&[(pr, 1.0)], -inputs.prev_p_r / sc.power, w[2] * rate);
        } else {
            b.square(
                &[(pg, 1.0), (layout.at(Family::GeneratorPower, i - 1), -1.0)],
                0.0,
                w[1] * rate,
            );
            b.square(
                &[(pr, 1.0), (layout.at(Family::RotorPower, i - 1), -1.0)],
                0.0,
                w[2] * rate,
            );
        }

        // Strategy terms act on the predicted K[i+1].
        b.g[kn] -= w[4];
        if w[5] > 0.0 {
            b.square(&[(kn, 1.0)], -k_ref, w[5]);
        }

        // K[i+1] = K[i] + Ts (P_r − P_g / η).
        let (prev_k, c) = energy_term(&layout, k0, i, -1.0);
        let mut terms = vec![(kn, 1.0), (pr, -dyn_gain), (pg, dyn_gain / eta)];
        push_opt(&mut terms, prev_k);
        b.equal(&terms, c);

        b.lb[pr] = 0.0;
        b.lb[pg] = 0.0;
        b.ub[pg] = 1.0;
        b.lb[kn] = k_lo;
        b.ub[kn] = k_hi;

        // Available power at K[i].
        let br = brackets[i];
        let cut_rows = |b: &mut Builder, grid: usize, target: usize| {
            let v3 = env.wind_grid[grid].powi(3);
            for s in &env.segments[grid] {
                let (kt, kc) = energy_term(&layout, k0, i, -v3 * s.a * sc.energy / sc.power);
                let mut terms = vec![(target, 1.0)];
                push_opt(&mut terms, kt);
                b.le(&terms, kc - v3 * s.b / sc.power);
            }
        };
        if interpolate {
            let u1 = layout.at(Family::EnvelopeLower, i);
            let u2 = layout.at(Family::EnvelopeUpper, i);
            b.le(&[(pr, 1.0), (u1, -(1.0 - br.theta)), (u2, -br.theta)], 0.0);
            cut_rows(&mut b, br.lower, u1);
            cut_rows(&mut b, br.upper, u2);
        } else {
            cut_rows(&mut b, br.lower, pr);
        }

        // Torque-limited generator power.
        for s in inputs.torque_cuts {
            let (kt, kc) = energy_term(&layout, k0, i, -s.a * sc.energy / sc.power);
            let mut terms = vec![(pg, 1.0)];
            push_opt(&mut terms, kt);
            b.le(&terms, kc - s.b / sc.power);
        }

        if let Some(m) = inputs.models {
            if stall {
                // Q P_r + R K + S ≤ −δ.
                let st = m.stall;
                let (kt, kc) = energy_term(&layout, k0, i, st.r * sc.energy / sc.torque);
                let mut terms = vec![(pr, st.q * sc.power / sc.torque)];
                push_opt(&mut terms, kt);
                if inputs.soften_stall {
                    let sl = layout.at(Family::StallSlack, i);
                    terms.push((sl, -1.0));
                    b.lb[sl] = 0.0;
                    b.g[sl] += cfg.stall_penalty;
                }
                b.le(&terms, kc + (st.s + cfg.delta) / sc.torque);
            }
            if w[6] > 0.0 {
                let th = m.thrust;
                let (kt, kc) = energy_term(&layout, k0, i, th.r * sc.energy / THRUST_SCALE);
                let mut terms = vec![(pr, th.q * sc.power / THRUST_SCALE)];
                push_opt(&mut terms, kt);
                let d = kc + th.s / THRUST_SCALE;
                if thrust_epigraph {
                    let f = layout.at(Family::ThrustExtra, i);
                    terms.push((f, -1.0));
                    b.le(&terms, d);
                    b.lb[f] = 0.0;
                    b.g[f] += w[6];
                } else {
                    b.square(&terms, d, w[6]);
                }
            }
        }

        if overage {
            let s = layout.at(Family::Overage, i);
            b.le(&[(kn, 1.0), (s, -1.0)], -params.k_rated() / sc.energy);
            b.lb[s] = 0.0;
            b.g[s] += w[3];
        }
    }

    for j in 0..layout.n_vars() {
        b.h.push((j, j, 2.0 * cfg.regularization));
    }
    Ok((b.finish(), layout))
}

/// Converts a scaled solution vector into physical units.
pub fn extract_plan(params: &TurbineParams, layout: &Layout, k0: f64, z: &[f64]) -> HorizonPlan {
    let sc = Scales::new(params);
    let n = layout.steps;
    let family = |f: Family, scale: f64| -> Vec<f64> {
        match layout.index(f, 0) {
            Some(s) => z[s..s + n].iter().map(|x| x * scale).collect(),
            None => vec![0.0; n],
        }
    };
    let mut k = vec![k0];
    k.extend(family(Family::Energy, sc.energy));
    HorizonPlan {
        p_r: family(Family::RotorPower, sc.power),
        p_g: family(Family::GeneratorPower, sc.power),
        k,
        overage: family(Family::Overage, sc.energy),
        thrust_extra: family(Family::ThrustExtra, THRUST_SCALE),
        stall_slack: family(Family::StallSlack, sc.torque),
    }
}

/// Pitch that makes the rotor deliver `p_r` at kinetic energy `k`.
///
/// An unachievable power falls back to the pitch of maximum Cp.
pub fn pitch_command(
    surface: &AeroSurface,
    params: &TurbineParams,
    p_r: f64,
    k: f64,
    v: f64,
) -> Result<f64, MpcError> {
    if !(k > 0.0 && v > 0.0) {
        return Err(MpcError::DegenerateK(k));
    }
    let cp = p_r / params.wind_factor(v, 3);
    let lambda = params.tip_speed_ratio(params.omega_from_energy(k), v);
    let theta = match surface.pitch_from_cp(cp, lambda) {
        Ok(t) => t,
        Err(AeroError::Unachievable { .. }) => surface.max_cp_at(lambda)?.0,
        Err(e) => return Err(e.into()),
    };
    Ok(theta.clamp(params.theta_min, params.theta_max))
}

/// Generator torque delivering electrical power `p_g` at kinetic energy `k`.
pub fn torque_command(params: &TurbineParams, p_g: f64, k: f64) -> Result<f64, MpcError> {
    if !(k >= K_EPS) {
        return Err(MpcError::DegenerateK(k));
    }
    let omega = params.omega_from_energy(k);
    Ok((p_g / (params.eta_g * omega)).clamp(0.0, params.torque_g_max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub k: f64,
    pub theta: f64,
    pub v: f64,
}

/// Per-step controller record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub command: ActuatorCommand,
    /// `None` when no QP could be posed.
    pub status: Option<QpStatus>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub worst_violation: f64,
    pub feasible: bool,
    /// Value of the active strategy term (weighted, dimensionless).
    pub strategy_term: f64,
    /// Largest stall slack over the horizon, N·m/rad.
    pub stall_slack: f64,
    pub degraded: bool,
    pub authority_lost: bool,
    /// First planned powers, W (previous values when degraded).
    pub p_r: f64,
    pub p_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Diagnostics {
    pub steps: usize,
    pub degraded_steps: usize,
    pub authority_lost_steps: usize,
}

/// Controller state carried between steps.
pub struct Controller<'a> {
    params: &'a TurbineParams,
    surface: &'a AeroSurface,
    envelope: &'a PwaEnvelope,
    cfg: MpcConfig,
    settings: QpSettings,
    cuts: Vec<Segment>,
    lambda_opt: f64,
    warm: Option<(Layout, Vec<f64>, Duals, f64)>,
    command: ActuatorCommand,
    p_r: f64,
    p_g: f64,
    models: Option<LinearModels>,
    plan: Option<HorizonPlan>,
    diagnostics: Diagnostics,
}

impl<'a> Controller<'a> {
    /// Starts from the torque that balances the rotor at `initial`.
    pub fn new(
        params: &'a TurbineParams,
        surface: &'a AeroSurface,
        envelope: &'a PwaEnvelope,
        cfg: MpcConfig,
        initial: &PlantState,
        v: f64,
    ) -> Result<Self, MpcError> {
        cfg.validate()?;
        let lambda_opt = cfg.lambda_opt.unwrap_or_else(|| surface.optimum().0);
        let cuts = torque_limit_cuts(params, &torque_cut_grid(params, cfg.torque_cuts));
        let lambda = params.tip_speed_ratio(initial.omega_g, v);
        let p_r = params.wind_factor(v, 3) * surface.cp(lambda, initial.theta)?;
        let torque = (p_r / initial.omega_g).clamp(0.0, params.torque_g_max);
        let settings = QpSettings {
            max_iter: cfg.qp_max_iter,
            ..QpSettings::default()
        };
        Ok(Self {
            params,
            surface,
            envelope,
            cfg,
            settings,
            cuts,
            lambda_opt,
            warm: None,
            command: ActuatorCommand {
                torque_g: torque,
                theta_cmd: initial.theta,
            },
            p_r,
            p_g: params.eta_g * torque * initial.omega_g,
            models: None,
            plan: None,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn lambda_opt(&self) -> f64 {
        self.lambda_opt
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    pub fn last_plan(&self) -> Option<&HorizonPlan> {
        self.plan.as_ref()
    }

    pub fn command(&self) -> ActuatorCommand {
        self.command
    }

    /// Fresh linearizations at the measurement; the previous ones are kept
    /// when pitch has lost authority over Cp.
    fn refresh_models(&mut self, m: &Measurement) -> bool {
        let fresh = linearize::taylor_coeffs(self.surface, self.params, m.v, m.k, m.theta)
            .and_then(|c| {
                Ok(LinearModels {
                    thrust: linearize::thrust_affine(&c, self.params)?,
                    stall: linearize::stall_affine(self.surface, self.params, m.v, m.k, m.theta)?,
                })
            });
        match fresh {
            Ok(models) => {
                self.models = Some(models);
                false
            }
            Err(_) => true,
        }
    }

    fn hold(&mut self, status: Option<QpStatus>, authority_lost: bool) -> StepReport {
        self.diagnostics.degraded_steps += 1;
        StepReport {
            command: self.command,
            status,
            iterations: 0,
            kkt_residual: f64::NAN,
            worst_violation: f64::NAN,
            feasible: false,
            strategy_term: f64::NAN,
            stall_slack: f64::NAN,
            degraded: true,
            authority_lost,
            p_r: self.p_r,
            p_g: self.p_g,
        }
    }

    fn solve(&self, inputs: &ProblemInputs<'_>) -> Option<(QpProblem, Layout, QpSolution)> {
        let (problem, layout) = build_problem(&self.cfg, inputs).ok()?;
        let (z, duals, rho) = match &self.warm {
            Some((l, z, d, rho)) if *l == layout && d.ineq.len() == problem.b_in.len() => {
                (Some(l.shift(z)), Some(l.shift_duals(d)), *rho)
            }
            _ => (None, None, self.settings.rho),
        };
        let settings = QpSettings {
            rho,
            ..self.settings.clone()
        };
        let sol = settings
            .solve(&problem, z.as_deref(), duals.as_ref())
            .ok()?;
        Some((problem, layout, sol))
    }

    /// One controller update. `p_ref` and the optional wind preview cover the
    /// horizon; without a preview the measured wind is held.
    pub fn step(
        &mut self,
        m: &Measurement,
        p_ref: &[f64],
        wind_preview: Option<&[f64]>,
    ) -> StepReport {
        self.diagnostics.steps += 1;
        let authority_lost = self.refresh_models(m);
        if authority_lost {
            self.diagnostics.authority_lost_steps += 1;
        }
        let n = self.cfg.steps();
        let held;
        let wind = match wind_preview {
            Some(w) => w,
            None => {
                held = vec![m.v; n];
                &held
            }
        };
        let inputs = ProblemInputs {
            params: self.params,
            envelope: self.envelope,
            torque_cuts: &self.cuts,
            k0: m.k,
            wind,
            p_ref,
            prev_p_g: self.p_g,
            prev_p_r: self.p_r,
            k_ref: kinetic_reference(self.params, &self.cfg, self.lambda_opt, m.v),
            models: self.models,
            soften_stall: false,
        };
        // The hard stall rows give the penalized problem's solution whenever
        // they are feasible and their multipliers stay below the penalty; the
        // softened form is only posed when the hard one fails.
        let mut attempt = self.solve(&inputs);
        if !matches!(attempt, Some((_, _, ref s)) if s.status == QpStatus::Optimal)
            && self.cfg.stall_constraint
            && self.models.is_some()
        {
            attempt = self.solve(&ProblemInputs {
                soften_stall: true,
                ..inputs.clone()
            });
        }
        let Some((problem, layout, sol)) = attempt else {
            return self.hold(None, authority_lost);
        };
        if sol.status != QpStatus::Optimal {
            self.warm = None;
            return self.hold(Some(sol.status), authority_lost);
        }
        let check = qp::validate(&problem, &sol.z);
        let plan = extract_plan(self.params, &layout, m.k, &sol.z);
        let (p_r, p_g) = (plan.p_r[0], plan.p_g[0]);
        let theta = pitch_command(self.surface, self.params, p_r, m.k, m.v)
            .unwrap_or(self.command.theta_cmd);
        let torque = torque_command(self.params, p_g, m.k).unwrap_or(self.command.torque_g);
        self.command = ActuatorCommand {
            torque_g: torque,
            theta_cmd: theta,
        };
        self.p_r = p_r;
        self.p_g = p_g;

        let w = self.cfg.weights();
        let sc = Scales::new(self.params);
        let k_ref = inputs.k_ref / sc.energy;
        let strategy_term = match self.cfg.strategy {
            Strategy::MaxKineticEnergy => {
                -w[4] * plan.k[1..].iter().map(|k| k / sc.energy).sum::<f64>()
            }
            Strategy::ConstantTipSpeedRatio | Strategy::ConstantRotorSpeed => {
                w[5] * plan.k[1..]
                    .iter()
                    .map(|k| (k / sc.energy - k_ref).powi(2))
                    .sum::<f64>()
            }
            Strategy::MinThrust => match (self.cfg.thrust_form, self.models) {
                (ThrustForm::Epigraph, _) => {
                    w[6] * plan.thrust_extra.iter().sum::<f64>() / THRUST_SCALE
                }
                (ThrustForm::Quadratic, Some(md)) => {
                    w[6] * (0..n)
                        .map(|i| (md.thrust.eval(plan.p_r[i], plan.k[i]) / THRUST_SCALE).powi(2))
                        .sum::<f64>()
                }
                (ThrustForm::Quadratic, None) => 0.0,
            },
        };
        let stall_slack = plan.stall_slack.iter().fold(0.0_f64, |a, &b| a.max(b));
        self.warm = Some((layout, sol.z, sol.duals, sol.rho));
        self.plan = Some(plan);
        StepReport {
            command: self.command,
            status: Some(sol.status),
            iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
            worst_violation: check.worst_violation,
            feasible: check.feasible,
            strategy_term,
            stall_slack,
            degraded: false,
            authority_lost,
            p_r,
            p_g,
        }
    }
}
