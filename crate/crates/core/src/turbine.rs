//! Rigid-shaft turbine plant.
//!
//! Generator-side torque balance `J ω̇_g = T_r / G_B − T_g`, integrated with
//! classical RK4. Pitch follows its command with a rate limit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aero::{AeroError, AeroSurface};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TurbineError {
    #[error(transparent)]
    Aero(#[from] AeroError),
    #[error("generator speed {omega_g} rad/s left (0, {limit}) at t={t} s")]
    NumericalBlowup { omega_g: f64, limit: f64, t: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid step: {0}")]
    InvalidStep(String),
}

/// Physical constants of the turbine. Speeds and inertia are referred to the
/// high-speed (generator) shaft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurbineParams {
    /// Equivalent inertia, kg·m².
    pub inertia: f64,
    pub gearbox_ratio: f64,
    pub rotor_radius: f64,
    pub rotor_area: f64,
    pub rho: f64,
    pub eta_g: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub omega_g_min: f64,
    pub omega_g_max: f64,
    pub omega_g_rated: f64,
    pub torque_g_max: f64,
    pub power_g_rated: f64,
    pub theta_rate_max: f64,
}

impl Default for TurbineParams {
    /// Roughly the NREL 5 MW reference machine. Inertia is rotor plus hub
    /// referred through the gearbox, plus the generator.
    fn default() -> Self {
        let rotor_radius = 63.0;
        let gearbox_ratio = 97.0;
        let omega_g_rated = 122.9;
        Self {
            inertia: (38_759_236.0 + 115_926.0) / (gearbox_ratio * gearbox_ratio) + 534.116,
            gearbox_ratio,
            rotor_radius,
            rotor_area: std::f64::consts::PI * rotor_radius * rotor_radius,
            rho: 1.225,
            eta_g: 0.944,
            theta_min: 0.0,
            theta_max: 0.52,
            omega_g_min: 0.4 * omega_g_rated,
            omega_g_max: omega_g_rated,
            omega_g_rated,
            torque_g_max: 43_093.55,
            power_g_rated: 5.0e6,
            theta_rate_max: 0.14,
        }
    }
}

impl TurbineParams {
    pub fn validate(&self) -> Result<(), TurbineError> {
        let positive = [
            ("inertia", self.inertia),
            ("gearbox_ratio", self.gearbox_ratio),
            ("rotor_radius", self.rotor_radius),
            ("rotor_area", self.rotor_area),
            ("rho", self.rho),
            ("eta_g", self.eta_g),
            ("omega_g_min", self.omega_g_min),
            ("omega_g_max", self.omega_g_max),
            ("omega_g_rated", self.omega_g_rated),
            ("torque_g_max", self.torque_g_max),
            ("power_g_rated", self.power_g_rated),
            ("theta_rate_max", self.theta_rate_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(TurbineError::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.eta_g > 1.0 {
            return Err(TurbineError::InvalidParams(
                "eta_g must be in (0, 1]".into(),
            ));
        }
        if !(self.theta_min < self.theta_max) {
            return Err(TurbineError::InvalidParams(
                "theta_min must be below theta_max".into(),
            ));
        }
        if !(self.omega_g_min < self.omega_g_rated && self.omega_g_rated <= self.omega_g_max) {
            return Err(TurbineError::InvalidParams(
                "need omega_g_min < omega_g_rated <= omega_g_max".into(),
            ));
        }
        let disk = std::f64::consts::PI * self.rotor_radius * self.rotor_radius;
        if ((self.rotor_area - disk) / disk).abs() > 1e-6 {
            return Err(TurbineError::InvalidParams(format!(
                "rotor_area {} is not pi*R^2 = {disk}",
                self.rotor_area
            )));
        }
        Ok(())
    }

    /// Relative gap between `η_g · T_g,max · ω_g,rated` and rated power.
    pub fn rated_power_mismatch(&self) -> f64 {
        (self.eta_g * self.torque_g_max * self.omega_g_rated - self.power_g_rated).abs()
            / self.power_g_rated
    }

    pub fn kinetic_energy(&self, omega_g: f64) -> f64 {
        kinetic_energy(self, omega_g)
    }

    pub fn omega_from_energy(&self, k: f64) -> f64 {
        (2.0 * k.max(0.0) / self.inertia).sqrt()
    }

    pub fn k_min(&self) -> f64 {
        kinetic_energy(self, self.omega_g_min)
    }

    pub fn k_max(&self) -> f64 {
        kinetic_energy(self, self.omega_g_max)
    }

    pub fn k_rated(&self) -> f64 {
        kinetic_energy(self, self.omega_g_rated)
    }

    pub fn tip_speed_ratio(&self, omega_g: f64, v: f64) -> f64 {
        self.rotor_radius * omega_g / (self.gearbox_ratio * v)
    }

    /// Generator speed giving tip-speed ratio `lambda` at wind `v`.
    pub fn omega_for_tsr(&self, lambda: f64, v: f64) -> f64 {
        lambda * v * self.gearbox_ratio / self.rotor_radius
    }

    /// `0.5 ρ A_r v^n`.
    pub fn wind_factor(&self, v: f64, n: i32) -> f64 {
        0.5 * self.rho * self.rotor_area * v.powi(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub omega_g: f64,
    pub theta: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub torque_g: f64,
    pub theta_cmd: f64,
}

impl ActuatorCommand {
    pub fn clamped(self, params: &TurbineParams) -> Self {
        Self {
            torque_g: self.torque_g.clamp(0.0, params.torque_g_max),
            theta_cmd: self.theta_cmd.clamp(params.theta_min, params.theta_max),
        }
    }
}

pub fn kinetic_energy(params: &TurbineParams, omega_g: f64) -> f64 {
    0.5 * params.inertia * omega_g * omega_g
}

pub fn rotor_power(
    params: &TurbineParams,
    surface: &AeroSurface,
    v: f64,
    omega_g: f64,
    theta: f64,
) -> Result<f64, AeroError> {
    let lambda = params.tip_speed_ratio(omega_g, v);
    Ok(params.wind_factor(v, 3) * surface.cp(lambda, theta)?)
}

/// Aerodynamic torque on the low-speed shaft, `0.5 ρ A R v² Cq`.
pub fn rotor_torque(
    params: &TurbineParams,
    surface: &AeroSurface,
    v: f64,
    omega_g: f64,
    theta: f64,
) -> Result<f64, AeroError> {
    let lambda = params.tip_speed_ratio(omega_g, v);
    Ok(params.wind_factor(v, 2) * params.rotor_radius * surface.cq(lambda, theta)?)
}

pub fn generator_power(params: &TurbineParams, torque_g: f64, omega_g: f64) -> f64 {
    params.eta_g * torque_g * omega_g
}

pub fn thrust(
    params: &TurbineParams,
    surface: &AeroSurface,
    v: f64,
    omega_g: f64,
    theta: f64,
) -> Result<f64, AeroError> {
    let lambda = params.tip_speed_ratio(omega_g, v);
    Ok(params.wind_factor(v, 2) * surface.ct(lambda, theta)?)
}

/// Advances the plant by `dt` under a zero-order-held command.
///
/// Pitch moves toward the command at the rate limit, linearly within the
/// step; the shaft equation sees the pitch at each RK4 stage time.
pub fn step(
    params: &TurbineParams,
    surface: &AeroSurface,
    state: &PlantState,
    cmd: &ActuatorCommand,
    v: f64,
    dt: f64,
) -> Result<PlantState, TurbineError> {
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(TurbineError::InvalidStep(format!(
            "dt={dt} must lie in (0, 0.05]"
        )));
    }
    if !(v > 0.0) {
        return Err(TurbineError::InvalidStep(format!(
            "wind speed {v} must be positive"
        )));
    }
    let cmd = cmd.clamped(params);
    let max_move = params.theta_rate_max * dt;
    let dtheta = (cmd.theta_cmd - state.theta).clamp(-max_move, max_move);
    let theta_at = |frac: f64| state.theta + frac * dtheta;

    let accel = |omega: f64, theta: f64| -> Result<f64, TurbineError> {
        let tr = rotor_torque(params, surface, v, omega, theta)?;
        Ok((tr / params.gearbox_ratio - cmd.torque_g) / params.inertia)
    };

    let w = state.omega_g;
    let k1 = accel(w, theta_at(0.0))?;
    let k2 = accel(w + 0.5 * dt * k1, theta_at(0.5))?;
    let k3 = accel(w + 0.5 * dt * k2, theta_at(0.5))?;
    let k4 = accel(w + dt * k3, theta_at(1.0))?;
    let omega_g = w + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    let t = state.t + dt;

    let limit = 2.0 * params.omega_g_max;
    if !(omega_g > 0.0 && omega_g < limit) {
        return Err(TurbineError::NumericalBlowup { omega_g, limit, t });
    }
    let theta = (state.theta + dtheta).clamp(params.theta_min, params.theta_max);
    Ok(PlantState { omega_g, theta, t })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (TurbineParams, AeroSurface) {
        (TurbineParams::default(), AeroSurface::parametric_default())
    }

    #[test]
    fn default_params_are_valid() {
        let p = TurbineParams::default();
        p.validate().unwrap();
        assert!(p.rated_power_mismatch() < 1e-3);
        let mut bad = p.clone();
        bad.rotor_area *= 1.01;
        assert!(bad.validate().is_err());
        let mut bad = p;
        bad.omega_g_min = 200.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn energy_and_power_arithmetic() {
        let mut p = TurbineParams::default();
        p.inertia = 2.0;
        assert_eq!(kinetic_energy(&p, 10.0), 100.0);
        assert_eq!(kinetic_energy(&p, 0.0), 0.0);
        p.eta_g = 0.944;
        assert!((generator_power(&p, 1000.0, 100.0) - 94_400.0).abs() < 1e-9);
        assert_eq!(generator_power(&p, 0.0, 100.0), 0.0);

        // Lossless generator at rated torque and speed delivers the rated
        // mechanical power, P_rated / η of the default machine.
        let d = TurbineParams::default();
        let lossless = TurbineParams {
            eta_g: 1.0,
            ..d.clone()
        };
        let pg = generator_power(&lossless, d.torque_g_max, d.omega_g_rated);
        assert!((pg * d.eta_g / d.power_g_rated - 1.0).abs() < 1e-3);
    }

    #[test]
    fn power_laws_in_wind() {
        let (p, s) = setup();
        let w = p.omega_for_tsr(7.0, 6.0);
        let p1 = rotor_power(&p, &s, 6.0, w, 0.05).unwrap();
        let p2 = rotor_power(&p, &s, 12.0, 2.0 * w, 0.05).unwrap();
        assert!((p2 / p1 - 8.0).abs() < 1e-12);
        let f1 = thrust(&p, &s, 6.0, w, 0.05).unwrap();
        let f2 = thrust(&p, &s, 12.0, 2.0 * w, 0.05).unwrap();
        assert!((f2 / f1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn power_equals_torque_times_speed() {
        let (p, s) = setup();
        for (v, lam, th) in [(8.0, 8.1, 0.0), (7.0, 5.0, 0.2), (11.0, 9.5, 0.11)] {
            let w = p.omega_for_tsr(lam, v);
            let pr = rotor_power(&p, &s, v, w, th).unwrap();
            let tr = rotor_torque(&p, &s, v, w, th).unwrap();
            let via_torque = tr * w / p.gearbox_ratio;
            assert!(((pr - via_torque) / pr).abs() < 1e-12);
        }
    }

    #[test]
    fn equilibrium_holds_speed() {
        let (p, s) = setup();
        let w = p.omega_for_tsr(8.1, 8.0);
        let tr = rotor_torque(&p, &s, 8.0, w, 0.0).unwrap();
        let state = PlantState {
            omega_g: w,
            theta: 0.0,
            t: 0.0,
        };
        let cmd = ActuatorCommand {
            torque_g: tr / p.gearbox_ratio,
            theta_cmd: 0.0,
        };
        let next = step(&p, &s, &state, &cmd, 8.0, 0.01).unwrap();
        assert!(((next.omega_g - w) / w).abs() < 1e-9);
    }

    #[test]
    fn free_rotor_accelerates() {
        let (p, s) = setup();
        let state = PlantState {
            omega_g: 80.0,
            theta: 0.0,
            t: 0.0,
        };
        let cmd = ActuatorCommand {
            torque_g: 0.0,
            theta_cmd: 0.0,
        };
        let next = step(&p, &s, &state, &cmd, 8.0, 0.01).unwrap();
        assert!(next.omega_g > state.omega_g);
    }

    #[test]
    fn pitch_rate_is_limited() {
        let (p, s) = setup();
        let state = PlantState {
            omega_g: 90.0,
            theta: 0.0,
            t: 0.0,
        };
        let cmd = ActuatorCommand {
            torque_g: 20_000.0,
            theta_cmd: 0.5,
        };
        let next = step(&p, &s, &state, &cmd, 8.0, 0.01).unwrap();
        assert!((next.theta - 0.0014).abs() < 1e-12);
    }

    #[test]
    fn blowup_is_reported() {
        let (p, s) = setup();
        let state = PlantState {
            omega_g: 50.0,
            theta: 0.0,
            t: 0.0,
        };
        let cmd = ActuatorCommand {
            torque_g: p.torque_g_max,
            theta_cmd: 0.0,
        };
        let mut st = state;
        let mut err = None;
        for _ in 0..10_000 {
            match step(&p, &s, &st, &cmd, 8.0, 0.05) {
                Ok(n) => st = n,
                Err(e) => {
                    err = Some(e);
                    break;
                }
            }
        }
        // Heavy braking drives λ below the table before the speed reaches zero.
        assert!(err.is_some());
        assert!(step(&p, &s, &state, &cmd, 8.0, 0.1).is_err());
    }
}
