//! First-order models around the measured operating point.
//!
//! Cp and Ct are expanded in `(K, θ)`. Pitch is then eliminated through the
//! Cp expansion, `θ = (P_r / (0.5 ρ A v³) − r_P K − s_P) / q_P`, which turns
//! thrust and the pitch-torque slope into affine functions of `(P_r, K)`.

use thiserror::Error;

use crate::aero::{AeroError, AeroSurface};
use crate::turbine::TurbineParams;

/// Smallest |∂Cp/∂θ| (per rad) for which pitch can be eliminated.
pub const Q_EPS: f64 = 1e-3;
/// Smallest kinetic energy (J) at which `dλ/dK` is evaluated.
pub const K_EPS: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearizeError {
    #[error(transparent)]
    Aero(#[from] AeroError),
    #[error("kinetic energy {0} J is below the linearization floor")]
    DegenerateK(f64),
    #[error("pitch has no authority over Cp here (∂Cp/∂θ = {0:e})")]
    PitchAuthorityLost(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorCoeffs {
    pub q_p: f64,
    pub r_p: f64,
    pub s_p: f64,
    pub q_t: f64,
    pub r_t: f64,
    pub s_t: f64,
    pub k_star: f64,
    pub theta_star: f64,
    pub v: f64,
}

impl TaylorCoeffs {
    pub fn cp(&self, k: f64, theta: f64) -> f64 {
        self.q_p * theta + self.r_p * k + self.s_p
    }

    pub fn ct(&self, k: f64, theta: f64) -> f64 {
        self.q_t * theta + self.r_t * k + self.s_t
    }

    /// Pitch that the Cp expansion assigns to rotor power `p_r` at `k`.
    pub fn pitch_for_power(&self, params: &TurbineParams, p_r: f64, k: f64) -> f64 {
        let cp = p_r / params.wind_factor(self.v, 3);
        (cp - self.r_p * k - self.s_p) / self.q_p
    }
}

/// `Q·P_r + R·K + S`, thrust in N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineThrust {
    pub q: f64,
    pub r: f64,
    pub s: f64,
}

impl AffineThrust {
    pub fn eval(&self, p_r: f64, k: f64) -> f64 {
        self.q * p_r + self.r * k + self.s
    }
}

/// `Q·P_r + R·K + S`, the rotor-torque pitch slope ∂T_r/∂θ in N·m/rad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineStall {
    pub q: f64,
    pub r: f64,
    pub s: f64,
}

impl AffineStall {
    pub fn eval(&self, p_r: f64, k: f64) -> f64 {
        self.q * p_r + self.r * k + self.s
    }
}

/// `dλ/dK` at fixed wind.
pub fn dlambda_dk(params: &TurbineParams, v: f64, k: f64) -> f64 {
    params.rotor_radius / (params.gearbox_ratio * v * (2.0 * params.inertia * k).sqrt())
}

fn tsr(params: &TurbineParams, v: f64, k: f64) -> f64 {
    params.tip_speed_ratio(params.omega_from_energy(k), v)
}

pub fn taylor_coeffs(
    surface: &AeroSurface,
    params: &TurbineParams,
    v: f64,
    k_star: f64,
    theta_star: f64,
) -> Result<TaylorCoeffs, LinearizeError> {
    if !(k_star >= K_EPS) {
        return Err(LinearizeError::DegenerateK(k_star));
    }
    let lambda = tsr(params, v, k_star);
    let d = surface.partials(lambda, theta_star)?;
    let dl = dlambda_dk(params, v, k_star);
    let cp = surface.cp(lambda, theta_star)?;
    let ct = surface.ct(lambda, theta_star)?;
    let (q_p, r_p) = (d.dcp_dtheta, d.dcp_dlambda * dl);
    let (q_t, r_t) = (d.dct_dtheta, d.dct_dlambda * dl);
    Ok(TaylorCoeffs {
        q_p,
        r_p,
        s_p: cp - q_p * theta_star - r_p * k_star,
        q_t,
        r_t,
        s_t: ct - q_t * theta_star - r_t * k_star,
        k_star,
        theta_star,
        v,
    })
}

pub fn thrust_affine(
    coeffs: &TaylorCoeffs,
    params: &TurbineParams,
) -> Result<AffineThrust, LinearizeError> {
    let c = coeffs;
    if !(c.q_p.abs() >= Q_EPS) {
        return Err(LinearizeError::PitchAuthorityLost(c.q_p));
    }
    let ratio = c.q_t / c.q_p;
    let w2 = params.wind_factor(c.v, 2);
    Ok(AffineThrust {
        q: ratio / c.v,
        r: w2 * (c.r_t - c.r_p * ratio),
        s: w2 * (c.s_t - c.s_p * ratio),
    })
}

/// Affine model of ∂T_r/∂θ, obtained by expanding
/// `0.5 ρ A R v² ∂C_Q/∂θ` in `(K, θ)` and eliminating θ as for thrust.
pub fn stall_affine(
    surface: &AeroSurface,
    params: &TurbineParams,
    v: f64,
    k_star: f64,
    theta_star: f64,
) -> Result<AffineStall, LinearizeError> {
    let c = taylor_coeffs(surface, params, v, k_star, theta_star)?;
    if !(c.q_p.abs() >= Q_EPS) {
        return Err(LinearizeError::PitchAuthorityLost(c.q_p));
    }
    let slope = surface.pitch_torque_slope(tsr(params, v, k_star), theta_star)?;
    let scale = params.wind_factor(v, 2) * params.rotor_radius;
    let g = scale * slope.dcq_dtheta;
    let g_theta = scale * slope.d2cq_dtheta2;
    let g_k = scale * slope.d2cq_dtheta_dlambda * dlambda_dk(params, v, k_star);
    let s_g = g - g_theta * theta_star - g_k * k_star;
    let ratio = g_theta / c.q_p;
    Ok(AffineStall {
        q: ratio / params.wind_factor(v, 3),
        r: g_k - c.r_p * ratio,
        s: s_g - c.s_p * ratio,
    })
}

/// Nonlinear ∂T_r/∂θ at `(K, θ)`, the quantity [`AffineStall`] approximates.
pub fn pitch_torque_slope(
    surface: &AeroSurface,
    params: &TurbineParams,
    v: f64,
    k: f64,
    theta: f64,
) -> Result<f64, LinearizeError> {
    let slope = surface.pitch_torque_slope(tsr(params, v, k), theta)?;
    Ok(params.wind_factor(v, 2) * params.rotor_radius * slope.dcq_dtheta)
}
