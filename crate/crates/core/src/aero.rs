//! Aerodynamic coefficient surfaces.
//!
//! `AeroSurface` holds power and thrust coefficient tables over tip-speed
//! ratio λ and collective pitch θ (radians). The torque coefficient is always
//! derived as `Cq = Cp / λ`. Tables are interpolated with a C2 cubic spline so
//! that the first and second derivatives used by the MPC linearizations are
//! continuous.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::spline::{SplineSurface, SurfacePoint};
use crate::turbine::TurbineParams;

/// Betz limit on the power coefficient.
pub const BETZ_LIMIT: f64 = 16.0 / 27.0;

/// Smallest tip-speed ratio accepted by the torque-coefficient division.
pub const LAMBDA_EPS: f64 = 1e-3;

/// Lower clip of the default power-coefficient table.
pub const CP_MIN: f64 = -0.2;

/// Target-power-coefficient slack accepted by [`AeroSurface::pitch_from_cp`]
/// above the achievable maximum before reporting `Unachievable`.
pub const CP_TARGET_TOLERANCE: f64 = 1e-4;

const BISECTION_CP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AeroError {
    #[error("(lambda={lambda}, theta={theta}) lies outside the coefficient table")]
    OutOfDomain { lambda: f64, theta: f64 },
    #[error("tip-speed ratio {0} is too small for the torque coefficient")]
    DegenerateLambda(f64),
    #[error("power coefficient {target} exceeds the achievable maximum {max} at lambda={lambda}")]
    Unachievable { target: f64, max: f64, lambda: f64 },
    #[error("invalid coefficient table: {0}")]
    InvalidTable(String),
    #[error("table parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },
    #[error("i/o error reading {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceSource {
    ParametricDefault,
    UserTable,
}

impl fmt::Display for SurfaceSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceSource::ParametricDefault => f.write_str("parametric-default"),
            SurfaceSource::UserTable => f.write_str("user-table"),
        }
    }
}

/// First partial derivatives of the three coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub dcp_dlambda: f64,
    pub dcp_dtheta: f64,
    pub dct_dlambda: f64,
    pub dct_dtheta: f64,
    pub dcq_dlambda: f64,
    pub dcq_dtheta: f64,
}

/// Local stall indicators at an operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StallMargin {
    /// ∂T_r/∂θ in N·m/rad. Negative on the attached-flow side.
    pub dtr_dtheta: f64,
    /// Sign of ∂C_Q/∂ω_r (equal to the sign of ∂C_Q/∂λ at fixed wind).
    pub dcq_domega_sign: i8,
}

/// ∂C_Q/∂θ and its gradient in (λ, θ), used by the stall linearization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchTorqueSlope {
    pub dcq_dtheta: f64,
    pub d2cq_dtheta2: f64,
    pub d2cq_dtheta_dlambda: f64,
}

#[derive(Debug, Clone)]
pub struct AeroSurface {
    cp: SplineSurface,
    ct: SplineSurface,
    source: SurfaceSource,
}

/// Parametric power coefficient used to populate the default table.
///
/// Exponential model with induced tip-speed ratio
/// `1/λi = 1/(λ + 0.08β) − 0.035`, β in degrees:
/// `Cp = 0.5176 (116/λi − 0.4β − 5) exp(−21/λi) + 0.0068 λ`.
/// Not clipped; the table applies [`CP_MIN`].
pub fn parametric_cp(lambda: f64, theta: f64) -> f64 {
    let beta = theta.to_degrees();
    let inv_li = 1.0 / (lambda + 0.08 * beta) - 0.035;
    0.5176 * (116.0 * inv_li - 0.4 * beta - 5.0) * (-21.0 * inv_li).exp() + 0.0068 * lambda
}

/// Parametric thrust coefficient used to populate the default table.
///
/// Equal to the momentum-theory optimum 8/9 at λ = 8.1, θ = 0; grows
/// linearly with λ and decays with pitch. Not clipped; the table clips to [0, 2].
pub fn parametric_ct(lambda: f64, theta: f64) -> f64 {
    (8.0 / 9.0) * (lambda / 8.1) * (-theta / 0.1).exp()
}

fn uniform_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

impl AeroSurface {
    /// Default surface: the parametric models sampled on λ ∈ [1, 15] (step 0.1)
    /// and θ ∈ [0, 0.52] rad (step 0.01).
    pub fn parametric_default() -> Self {
        let lambda = uniform_grid(1.0, 15.0, 0.1);
        let theta = uniform_grid(0.0, 0.52, 0.01);
        let mut cp = Vec::with_capacity(lambda.len() * theta.len());
        let mut ct = Vec::with_capacity(lambda.len() * theta.len());
        for &l in &lambda {
            for &t in &theta {
                cp.push(parametric_cp(l, t).max(CP_MIN));
                ct.push(parametric_ct(l, t).clamp(0.0, 2.0));
            }
        }
        Self::build(lambda, theta, cp, ct, SurfaceSource::ParametricDefault)
            .expect("default surface is valid")
    }

    /// Builds a surface from row-major tables (`values[i * theta.len() + j]`
    /// at `(lambda[i], theta[j])`).
    pub fn from_tables(
        lambda: Vec<f64>,
        theta: Vec<f64>,
        cp: Vec<f64>,
        ct: Vec<f64>,
    ) -> Result<Self, AeroError> {
        Self::build(lambda, theta, cp, ct, SurfaceSource::UserTable)
    }

    fn build(
        lambda: Vec<f64>,
        theta: Vec<f64>,
        cp: Vec<f64>,
        ct: Vec<f64>,
        source: SurfaceSource,
    ) -> Result<Self, AeroError> {
        for (name, g) in [("lambda", &lambda), ("theta", &theta)] {
            if g.len() < 4 {
                return Err(AeroError::InvalidTable(format!(
                    "{name} grid needs at least 4 points"
                )));
            }
            if g.iter().any(|v| !v.is_finite()) || g.windows(2).any(|w| w[1] <= w[0]) {
                return Err(AeroError::InvalidTable(format!(
                    "{name} grid must be strictly increasing"
                )));
            }
        }
        let n = lambda.len() * theta.len();
        if cp.len() != n || ct.len() != n {
            return Err(AeroError::InvalidTable(format!(
                "expected {n} values per table, got cp={} ct={}",
                cp.len(),
                ct.len()
            )));
        }
        let nt = theta.len();
        for (k, (&p, &t)) in cp.iter().zip(&ct).enumerate() {
            let (row, col) = (k / nt, k % nt);
            if !p.is_finite() || !t.is_finite() {
                return Err(AeroError::Parse {
                    row,
                    col,
                    msg: "non-finite coefficient".into(),
                });
            }
            if p > BETZ_LIMIT + 1e-9 {
                return Err(AeroError::Parse {
                    row,
                    col,
                    msg: format!("Cp={p} exceeds the Betz limit"),
                });
            }
        }
        Ok(Self {
            cp: SplineSurface::new(lambda.clone(), theta.clone(), cp),
            ct: SplineSurface::new(lambda, theta, ct),
            source,
        })
    }

    /// Parses the plain-text table format: a `lambda:` line and a `theta:` line
    /// listing grid values, then the Cp block and the Ct block, row-major with
    /// one λ row per line. Blank lines and `#` comments are ignored.
    pub fn parse_table(text: &str) -> Result<Self, AeroError> {
        let mut lambda = None;
        let mut theta = None;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_values = |s: &str| -> Result<Vec<f64>, AeroError> {
                s.split_whitespace()
                    .enumerate()
                    .map(|(col, tok)| {
                        tok.parse::<f64>().map_err(|e| AeroError::Parse {
                            row: lineno + 1,
                            col: col + 1,
                            msg: format!("'{tok}': {e}"),
                        })
                    })
                    .collect()
            };
            if let Some(rest) = line.strip_prefix("lambda:") {
                lambda = Some(parse_values(rest)?);
            } else if let Some(rest) = line.strip_prefix("theta:") {
                theta = Some(parse_values(rest)?);
            } else {
                rows.push((lineno + 1, parse_values(line)?));
            }
        }
        let lambda =
            lambda.ok_or_else(|| AeroError::InvalidTable("missing 'lambda:' header".into()))?;
        let theta =
            theta.ok_or_else(|| AeroError::InvalidTable("missing 'theta:' header".into()))?;
        if rows.len() != 2 * lambda.len() {
            return Err(AeroError::InvalidTable(format!(
                "expected {} data rows (Cp then Ct), found {}",
                2 * lambda.len(),
                rows.len()
            )));
        }
        let mut values = Vec::with_capacity(2 * lambda.len() * theta.len());
        for (line, row) in &rows {
            if row.len() != theta.len() {
                return Err(AeroError::Parse {
                    row: *line,
                    col: row.len().min(theta.len()) + 1,
                    msg: format!("expected {} values, found {}", theta.len(), row.len()),
                });
            }
            values.extend_from_slice(row);
        }
        let ct = values.split_off(lambda.len() * theta.len());
        Self::from_tables(lambda, theta, values, ct)
    }

    pub fn from_table_file(path: &Path) -> Result<Self, AeroError> {
        let text = std::fs::read_to_string(path).map_err(|e| AeroError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse_table(&text)
    }

    /// Renders the surface in the format read by [`AeroSurface::parse_table`].
    pub fn to_table_string(&self) -> String {
        let fmt_row = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let nt = self.theta_grid().len();
        let mut out = String::new();
        out.push_str(&format!("lambda: {}\n", fmt_row(self.lambda_grid())));
        out.push_str(&format!("theta: {}\n", fmt_row(self.theta_grid())));
        out.push_str("# Cp\n");
        for row in self.cp.node_values().chunks(nt) {
            out.push_str(&fmt_row(row));
            out.push('\n');
        }
        out.push_str("# Ct\n");
        for row in self.ct.node_values().chunks(nt) {
            out.push_str(&fmt_row(row));
            out.push('\n');
        }
        out
    }

    pub fn source(&self) -> SurfaceSource {
        self.source
    }

    pub fn lambda_grid(&self) -> &[f64] {
        self.cp.x_grid()
    }

    pub fn theta_grid(&self) -> &[f64] {
        self.cp.y_grid()
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        let g = self.lambda_grid();
        (g[0], g[g.len() - 1])
    }

    pub fn theta_range(&self) -> (f64, f64) {
        let g = self.theta_grid();
        (g[0], g[g.len() - 1])
    }

    /// Stored Cp node values, row-major in (λ, θ).
    pub fn cp_values(&self) -> &[f64] {
        self.cp.node_values()
    }

    /// Stored Ct node values, row-major in (λ, θ).
    pub fn ct_values(&self) -> &[f64] {
        self.ct.node_values()
    }

    fn check(&self, lambda: f64, theta: f64) -> Result<(), AeroError> {
        if self.cp.contains(lambda, theta) {
            Ok(())
        } else {
            Err(AeroError::OutOfDomain { lambda, theta })
        }
    }

    fn cp_point(&self, lambda: f64, theta: f64) -> Result<SurfacePoint, AeroError> {
        self.check(lambda, theta)?;
        Ok(self.cp.eval(lambda, theta))
    }

    pub fn cp(&self, lambda: f64, theta: f64) -> Result<f64, AeroError> {
        Ok(self.cp_point(lambda, theta)?.f)
    }

    pub fn cq(&self, lambda: f64, theta: f64) -> Result<f64, AeroError> {
        if !(lambda > LAMBDA_EPS) {
            return Err(AeroError::DegenerateLambda(lambda));
        }
        Ok(self.cp(lambda, theta)? / lambda)
    }

    pub fn ct(&self, lambda: f64, theta: f64) -> Result<f64, AeroError> {
        self.check(lambda, theta)?;
        Ok(self.ct.eval(lambda, theta).f)
    }

    pub fn partials(&self, lambda: f64, theta: f64) -> Result<Partials, AeroError> {
        if !(lambda > LAMBDA_EPS) {
            return Err(AeroError::DegenerateLambda(lambda));
        }
        let p = self.cp_point(lambda, theta)?;
        let t = self.ct.eval(lambda, theta);
        Ok(Partials {
            dcp_dlambda: p.fx,
            dcp_dtheta: p.fy,
            dct_dlambda: t.fx,
            dct_dtheta: t.fy,
            dcq_dlambda: p.fx / lambda - p.f / (lambda * lambda),
            dcq_dtheta: p.fy / lambda,
        })
    }

    /// ∂C_Q/∂θ together with its own derivatives in θ and λ.
    pub fn pitch_torque_slope(
        &self,
        lambda: f64,
        theta: f64,
    ) -> Result<PitchTorqueSlope, AeroError> {
        if !(lambda > LAMBDA_EPS) {
            return Err(AeroError::DegenerateLambda(lambda));
        }
        let p = self.cp_point(lambda, theta)?;
        Ok(PitchTorqueSlope {
            dcq_dtheta: p.fy / lambda,
            d2cq_dtheta2: p.fyy / lambda,
            d2cq_dtheta_dlambda: p.fxy / lambda - p.fy / (lambda * lambda),
        })
    }

    pub fn stall_margin(
        &self,
        params: &TurbineParams,
        v: f64,
        lambda: f64,
        theta: f64,
    ) -> Result<StallMargin, AeroError> {
        let d = self.partials(lambda, theta)?;
        let sign = if d.dcq_dlambda > 0.0 {
            1
        } else if d.dcq_dlambda < 0.0 {
            -1
        } else {
            0
        };
        Ok(StallMargin {
            dtr_dtheta: 0.5
                * params.rho
                * params.rotor_area
                * params.rotor_radius
                * v
                * v
                * d.dcq_dtheta,
            dcq_domega_sign: sign,
        })
    }

    /// Pitch maximizing Cp at fixed λ, and that maximum.
    ///
    /// Scans the θ nodes, then refines the best bracket by golden-section search.
    pub fn max_cp_at(&self, lambda: f64) -> Result<(f64, f64), AeroError> {
        let thetas = self.theta_grid();
        let mut best = 0;
        let mut best_cp = f64::NEG_INFINITY;
        for (j, &t) in thetas.iter().enumerate() {
            let c = self.cp(lambda, t)?;
            if c > best_cp {
                best_cp = c;
                best = j;
            }
        }
        let lo = thetas[best.saturating_sub(1)];
        let hi = thetas[(best + 1).min(thetas.len() - 1)];
        let f = |t: f64| self.cp.eval(lambda, t).f;
        let (t_star, c_star) = golden_max(f, lo, hi, 1e-10);
        if c_star >= best_cp {
            Ok((t_star, c_star))
        } else {
            Ok((thetas[best], best_cp))
        }
    }

    /// Pitch on the high-pitch branch (∂Cp/∂θ ≤ 0) that realizes `cp_target`.
    ///
    /// Returns the argmax pitch when the target is at or slightly above the
    /// maximum (within [`CP_TARGET_TOLERANCE`]), and the upper pitch limit of
    /// the table when even full feathering keeps Cp above the target.
    pub fn pitch_from_cp(&self, cp_target: f64, lambda: f64) -> Result<f64, AeroError> {
        let (t_max_cp, cp_max) = self.max_cp_at(lambda)?;
        if cp_target > cp_max + CP_TARGET_TOLERANCE {
            return Err(AeroError::Unachievable {
                target: cp_target,
                max: cp_max,
                lambda,
            });
        }
        if cp_target >= cp_max {
            return Ok(t_max_cp);
        }
        let (_, theta_hi) = self.theta_range();
        let cp_hi = self.cp(lambda, theta_hi)?;
        if cp_hi >= cp_target {
            return Ok(theta_hi);
        }
        // cp(lo) > target > cp(hi) on a monotone branch.
        let (mut lo, mut hi) = (t_max_cp, theta_hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let c = self.cp.eval(lambda, mid).f;
            if (c - cp_target).abs() <= BISECTION_CP_TOL {
                return Ok(mid);
            }
            if c > cp_target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Global optimum of the table: `(λ_opt, θ_opt, Cp_max)`.
    pub fn optimum(&self) -> (f64, f64, f64) {
        let lambdas = self.lambda_grid();
        let mut best = (lambdas[0], 0.0, f64::NEG_INFINITY);
        let mut best_i = 0;
        for (i, &l) in lambdas.iter().enumerate() {
            let (t, c) = self.max_cp_at(l).expect("grid node inside domain");
            if c > best.2 {
                best = (l, t, c);
                best_i = i;
            }
        }
        let lo = lambdas[best_i.saturating_sub(1)];
        let hi = lambdas[(best_i + 1).min(lambdas.len() - 1)];
        let f = |l: f64| {
            self.max_cp_at(l)
                .map(|(_, c)| c)
                .unwrap_or(f64::NEG_INFINITY)
        };
        let (l_star, c_star) = golden_max(f, lo, hi, 1e-8);
        if c_star > best.2 {
            let (t_star, _) = self
                .max_cp_at(l_star)
                .expect("refined optimum inside domain");
            (l_star, t_star, c_star)
        } else {
            best
        }
    }
}

/// Golden-section maximization on `[lo, hi]`, returning the best point seen
/// including the bracket ends.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_surface() -> AeroSurface {
        // cp = λ / 100 (kept below Betz), ct = 0.5
        let lambda: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
        let theta: Vec<f64> = (0..5).map(|j| j as f64 * 0.1).collect();
        let cp = lambda
            .iter()
            .flat_map(|&l| theta.iter().map(move |_| l / 100.0))
            .collect();
        let ct = vec![0.5; 30];
        AeroSurface::from_tables(lambda, theta, cp, ct).unwrap()
    }

    #[test]
    fn default_nodes_are_exact() {
        let s = AeroSurface::parametric_default();
        let nt = s.theta_grid().len();
        for (i, &l) in s.lambda_grid().iter().enumerate().step_by(17) {
            for (j, &t) in s.theta_grid().iter().enumerate().step_by(5) {
                assert_eq!(s.cp(l, t).unwrap(), s.cp_values()[i * nt + j]);
                assert_eq!(s.ct(l, t).unwrap(), s.ct_values()[i * nt + j]);
            }
        }
    }

    #[test]
    fn default_matches_formula_off_grid() {
        let s = AeroSurface::parametric_default();
        assert!((s.cp(8.0, 0.0).unwrap() - parametric_cp(8.0, 0.0)).abs() < 1e-3);
        assert!((s.cp(7.33, 0.047).unwrap() - parametric_cp(7.33, 0.047)).abs() < 1e-3);
        assert!((s.ct(7.0, 0.0).unwrap() - parametric_ct(7.0, 0.0)).abs() < 1e-3);
        assert!((s.ct(9.17, 0.123).unwrap() - parametric_ct(9.17, 0.123)).abs() < 1e-3);
    }

    #[test]
    fn betz_bound_holds_on_default() {
        let s = AeroSurface::parametric_default();
        assert!(s.cp_values().iter().all(|&c| c <= BETZ_LIMIT + 1e-9));
        assert!(s.cp_values().iter().all(|&c| c >= CP_MIN));
    }

    #[test]
    fn domain_guards() {
        let s = AeroSurface::parametric_default();
        assert!(matches!(s.cp(0.5, 0.1), Err(AeroError::OutOfDomain { .. })));
        assert!(matches!(s.ct(7.0, 0.6), Err(AeroError::OutOfDomain { .. })));
        assert!(matches!(
            s.cq(1e-9, 0.1),
            Err(AeroError::DegenerateLambda(_))
        ));
        assert!(matches!(
            s.cp(f64::NAN, 0.1),
            Err(AeroError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn cq_is_cp_over_lambda() {
        let s = AeroSurface::parametric_default();
        for (l, t) in [(9.0, 0.02), (4.4, 0.3), (12.0, 0.1)] {
            let cq = s.cq(l, t).unwrap();
            assert!((cq * l - s.cp(l, t).unwrap()).abs() < 1e-12);
        }
        let nt = s.theta_grid().len();
        for (i, &l) in s.lambda_grid().iter().enumerate().skip(1).step_by(13) {
            for (j, &t) in s.theta_grid().iter().enumerate().skip(1).step_by(7) {
                let cp = s.cp_values()[i * nt + j];
                assert!((s.cq(l, t).unwrap() * l - cp).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cq_of_zero_cp_is_zero() {
        let lambda = vec![1.0, 2.0, 3.0, 4.0];
        let theta = vec![0.0, 0.1, 0.2, 0.3];
        let s = AeroSurface::from_tables(lambda, theta, vec![0.0; 16], vec![0.3; 16]).unwrap();
        assert_eq!(s.cq(2.5, 0.15).unwrap(), 0.0);
    }

    #[test]
    fn constant_and_linear_partials() {
        let lambda = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let theta = vec![0.0, 0.1, 0.2, 0.3];
        let s = AeroSurface::from_tables(lambda, theta, vec![0.3; 20], vec![0.7; 20]).unwrap();
        let d = s.partials(2.7, 0.13).unwrap();
        for v in [d.dcp_dlambda, d.dcp_dtheta, d.dct_dlambda, d.dct_dtheta] {
            assert!(v.abs() < 1e-12);
        }

        let s = linear_surface();
        let d = s.partials(3.3, 0.21).unwrap();
        assert!((d.dcp_dlambda - 0.01).abs() < 1e-9);
        assert!(d.dcp_dtheta.abs() < 1e-9);
    }

    #[test]
    fn stall_margin_scales_with_wind_squared() {
        let s = AeroSurface::parametric_default();
        let p = TurbineParams::default();
        let a = s.stall_margin(&p, 8.0, 8.0, 0.3).unwrap();
        let b = s.stall_margin(&p, 16.0, 8.0, 0.3).unwrap();
        assert!(a.dtr_dtheta < 0.0);
        assert!((b.dtr_dtheta / a.dtr_dtheta - 4.0).abs() < 1e-12);

        let flat = linear_surface();
        let m = flat.stall_margin(&p, 8.0, 3.0, 0.2).unwrap();
        assert!(m.dtr_dtheta.abs() < 1e-9);
    }

    #[test]
    fn pitch_inversion_edges() {
        let s = AeroSurface::parametric_default();
        let (t_star, cp_max) = s.max_cp_at(8.0).unwrap();
        assert_eq!(s.pitch_from_cp(cp_max, 8.0).unwrap(), t_star);
        assert!(matches!(
            s.pitch_from_cp(1.2 * cp_max, 8.0),
            Err(AeroError::Unachievable { .. })
        ));
        let t = s.pitch_from_cp(0.9 * cp_max, 8.0).unwrap();
        assert!((s.cp(8.0, t).unwrap() - 0.9 * cp_max).abs() < 1e-6);
        assert!(s.partials(8.0, t).unwrap().dcp_dtheta <= 0.0);
    }

    #[test]
    fn low_tip_speed_ratio_has_interior_optimum() {
        // The stall side: at low λ the best pitch is strictly inside the range.
        let s = AeroSurface::parametric_default();
        let (t, _) = s.max_cp_at(4.0).unwrap();
        assert!(t > 0.05 && t < 0.5, "{t}");
        assert!(s.partials(4.0, 0.0).unwrap().dcq_dtheta > 0.0);
    }

    #[test]
    fn optimum_of_default() {
        let s = AeroSurface::parametric_default();
        let (l, t, c) = s.optimum();
        assert!((l - 8.1).abs() < 0.1, "{l}");
        assert!(t.abs() < 1e-6);
        assert!((c - 0.48).abs() < 1e-3, "{c}");
    }

    #[test]
    fn table_round_trip_and_errors() {
        let s = linear_surface();
        let text = s.to_table_string();
        let back = AeroSurface::parse_table(&text).unwrap();
        assert_eq!(back.cp_values(), s.cp_values());
        assert_eq!(back.source(), SurfaceSource::UserTable);

        let bad = text.replacen("\n1e-2", "\nx1e-2", 1);
        match AeroSurface::parse_table(&bad) {
            Err(AeroError::Parse { row, col, .. }) => assert!(row > 0 && col > 0),
            other => panic!("{other:?}"),
        }
        let over = "lambda: 1 2 3 4\ntheta: 0 1 2 3\n".to_string()
            + &"0.1 0.1 0.1 0.1\n".repeat(2)
            + "0.1 0.7 0.1 0.1\n0.1 0.1 0.1 0.1\n"
            + &"0.5 0.5 0.5 0.5\n".repeat(4);
        match AeroSurface::parse_table(&over) {
            Err(AeroError::Parse { row, col, .. }) => assert_eq!((row, col), (2, 1)),
            other => panic!("{other:?}"),
        }
        let short = "lambda: 1 2 3\ntheta: 0 1 2 3\n";
        assert!(matches!(
            AeroSurface::parse_table(short),
            Err(AeroError::InvalidTable(_))
        ));
    }
}
