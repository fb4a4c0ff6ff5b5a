//! Concave piecewise-affine envelopes of available power and generator
//! torque limits in kinetic-energy coordinates.
//!
//! Available power `P_av(v, K) = max_θ 0.5 ρ A v³ Cp(λ(K, v), θ)` is fitted at
//! each grid wind speed as `v_i³ · min_j (a_j K + b_j)` and interpolated
//! linearly in wind speed between grid points.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aero::{AeroError, AeroSurface};
use crate::turbine::TurbineParams;

const CACHE_MAGIC: &str = "downreg-envelope v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error(transparent)]
    Aero(#[from] AeroError),
    #[error("wind speed {v} m/s outside [{min}, {max}]")]
    WindOutOfDomain { v: f64, min: f64, max: f64 },
    #[error("kinetic energy {k} J outside [{min}, {max}]")]
    EnergyOutOfDomain { k: f64, min: f64, max: f64 },
    #[error("samples are not concave: defect {defect:.3e} of the peak exceeds {tol:.3e}")]
    NotConcave { defect: f64, tol: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("fit residual {residual:.3e} at v={v} m/s exceeds {tol:.3e}")]
    ResidualTooLarge { v: f64, residual: f64, tol: f64 },
    #[error("invalid envelope options: {0}")]
    InvalidOptions(String),
    #[error("envelope cache {path}: {msg}")]
    Cache { path: String, msg: String },
}

/// One affine piece `a·K + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: f64,
    pub b: f64,
}

impl Segment {
    pub fn eval(&self, k: f64) -> f64 {
        self.a * k + self.b
    }
}

pub fn min_of_affine(segments: &[Segment], k: f64) -> f64 {
    segments
        .iter()
        .map(|s| s.eval(k))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitSide {
    /// Least maximum residual, errors of either sign.
    TwoSided,
    /// Shifted down so the fit never exceeds the samples.
    Inner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeOptions {
    pub wind_min: f64,
    pub wind_max: f64,
    pub wind_step: f64,
    pub segments: usize,
    pub fit_samples: usize,
    pub validation_samples: usize,
    /// Allowed fit residual as a fraction of the peak available power.
    pub residual_tol: f64,
    pub side: FitSide,
    pub torque_cuts: usize,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self {
            wind_min: 6.0,
            wind_max: 12.0,
            wind_step: 0.5,
            segments: 6,
            fit_samples: 200,
            validation_samples: 200,
            residual_tol: 0.01,
            side: FitSide::TwoSided,
            torque_cuts: 8,
        }
    }
}

impl EnvelopeOptions {
    pub fn validate(&self) -> Result<(), EnvelopeError> {
        let bad = |m: &str| Err(EnvelopeError::InvalidOptions(m.to_string()));
        if !(self.wind_min > 0.0 && self.wind_max >= self.wind_min && self.wind_step > 0.0) {
            return bad("need 0 < wind_min <= wind_max and wind_step > 0");
        }
        if self.segments == 0 {
            return bad("segments must be positive");
        }
        if self.fit_samples < 2 * self.segments || self.validation_samples < 2 {
            return bad("too few samples for the segment count");
        }
        if self.torque_cuts < 3 {
            return bad("torque_cuts must be at least 3");
        }
        if !(self.residual_tol > 0.0) {
            return bad("residual_tol must be positive");
        }
        Ok(())
    }

    pub fn wind_grid(&self) -> Vec<f64> {
        let n = ((self.wind_max - self.wind_min) / self.wind_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.wind_min + i as f64 * self.wind_step)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwaEnvelope {
    pub wind_grid: Vec<f64>,
    /// Per wind speed, pieces of `P̂ / v_i³` sorted by strictly decreasing slope.
    pub segments: Vec<Vec<Segment>>,
    pub k: usize,
    pub k_range: (f64, f64),
    /// Validation residual per wind speed, as a fraction of the peak.
    pub residuals: Vec<f64>,
    /// Fingerprint of the inputs the envelope was built from.
    pub fingerprint: u64,
}

/// Bracketing grid points and weight for a wind speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindBracket {
    pub lower: usize,
    pub upper: usize,
    /// Interpolation weight of `upper`, in [0, 1].
    pub theta: f64,
}

/// λ as a function of kinetic energy at wind `v`.
pub fn tsr_from_energy(params: &TurbineParams, v: f64, k: f64) -> f64 {
    params.tip_speed_ratio(params.omega_from_energy(k), v)
}

/// Available aerodynamic power, clamped at zero.
pub fn available_power(
    params: &TurbineParams,
    surface: &AeroSurface,
    v: f64,
    k: f64,
) -> Result<f64, EnvelopeError> {
    let lambda = tsr_from_energy(params, v, k);
    let (_, cp) = surface.max_cp_at(lambda)?;
    Ok((params.wind_factor(v, 3) * cp).max(0.0))
}

/// Largest gap between the samples and their least concave majorant,
/// relative to the largest `|P|`. Samples must be sorted by `K`.
pub fn concavity_defect(samples: &[(f64, f64)]) -> f64 {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in samples {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let peak = samples.iter().fold(0.0_f64, |m, s| m.max(s.1.abs()));
    if peak == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    let mut h = 0;
    for &(x, y) in samples {
        while h + 1 < hull.len() && hull[h + 1].0 < x {
            h += 1;
        }
        let upper = if h + 1 < hull.len() {
            let (x0, y0) = hull[h];
            let (x1, y1) = hull[h + 1];
            if x1 > x0 {
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            } else {
                y0.max(y1)
            }
        } else {
            hull[h].1
        };
        worst = worst.max(upper - y);
    }
    worst / peak
}

fn max_residual(segs: &[Segment], xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| (min_of_affine(segs, x) - y).abs())
        .fold(0.0, f64::max)
}

fn ls_line(xs: &[f64], ys: &[f64], idx: &[usize]) -> Option<Segment> {
    if idx.len() < 2 {
        return None;
    }
    let n = idx.len() as f64;
    let mx = idx.iter().map(|&i| xs[i]).sum::<f64>() / n;
    let my = idx.iter().map(|&i| ys[i]).sum::<f64>() / n;
    let sxx: f64 = idx.iter().map(|&i| (xs[i] - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return None;
    }
    let sxy: f64 = idx.iter().map(|&i| (xs[i] - mx) * (ys[i] - my)).sum();
    let a = sxy / sxx;
    Some(Segment { a, b: my - a * mx })
}

fn assign(segs: &[Segment], xs: &[f64]) -> Vec<usize> {
    xs.iter()
        .map(|&x| {
            let mut best = 0;
            for j in 1..segs.len() {
                if segs[j].eval(x) < segs[best].eval(x) {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Alternating partition / least-squares refinement from an initial
/// assignment.
fn fit_alternating(xs: &[f64], ys: &[f64], k: usize, mut labels: Vec<usize>) -> Vec<Segment> {
    let mut segs = vec![
        Segment {
            a: 0.0,
            b: f64::INFINITY
        };
        k
    ];
    for _ in 0..50 {
        for (j, seg) in segs.iter_mut().enumerate() {
            let idx: Vec<usize> = (0..xs.len()).filter(|&i| labels[i] == j).collect();
            if let Some(s) = ls_line(xs, ys, &idx) {
                *seg = s;
            }
        }
        let finite: Vec<Segment> = segs.iter().copied().filter(|s| s.b.is_finite()).collect();
        if finite.is_empty() {
            break;
        }
        let next = assign(&segs, xs);
        if next == labels {
            break;
        }
        labels = next;
    }
    // Pieces that never received data are duplicates of a fitted one.
    let fallback = segs
        .iter()
        .copied()
        .find(|s| s.b.is_finite())
        .unwrap_or(Segment { a: 0.0, b: 0.0 });
    segs.iter()
        .map(|s| if s.b.is_finite() { *s } else { fallback })
        .collect()
}

/// Intercept of the lowest line of slope `m` lying above every `y − t`.
fn support_intercept(xs: &[f64], ys: &[f64], t: f64, m: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| y - t - m * x)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Slopes of supporting lines of `y − t` that stay within `y + t` at sample
/// `i`, or `None` when no supporting line does.
fn cover_interval(
    xs: &[f64],
    ys: &[f64],
    t: f64,
    i: usize,
    slopes: (f64, f64),
) -> Option<(f64, f64)> {
    // Convex in the slope: max of affine functions.
    let gap = |m: f64| m * xs[i] + support_intercept(xs, ys, t, m) - ys[i] - t;
    let (mut lo, mut hi) = slopes;
    for _ in 0..80 {
        let m1 = lo + 0.382 * (hi - lo);
        let m2 = hi - 0.382 * (hi - lo);
        if gap(m1) <= gap(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let best = 0.5 * (lo + hi);
    if gap(best) > 0.0 {
        return None;
    }
    let edge = |mut inside: f64, mut outside: f64| {
        if gap(outside) <= 0.0 {
            return outside;
        }
        for _ in 0..60 {
            let mid = 0.5 * (inside + outside);
            if gap(mid) <= 0.0 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    Some((edge(best, slopes.0), edge(best, slopes.1)))
}

/// Greedy cover of the samples by supporting lines of `y − t`: each line
/// covers the longest run starting at the leftmost uncovered sample.
/// Returns `None` when more than `k` lines are needed.
fn greedy_cover(
    xs: &[f64],
    ys: &[f64],
    t: f64,
    k: usize,
    slopes: (f64, f64),
) -> Option<Vec<Segment>> {
    let mut cache: Vec<Option<(f64, f64)>> = vec![None; xs.len()];
    let mut interval = |i: usize| -> Option<(f64, f64)> {
        if cache[i].is_none() {
            cache[i] = Some(cover_interval(xs, ys, t, i, slopes)?);
        }
        cache[i]
    };
    let mut lines = Vec::new();
    let mut s = 0;
    while s < xs.len() {
        if lines.len() == k {
            return None;
        }
        let (mut lo, mut hi) = interval(s)?;
        let mut e = s + 1;
        while e < xs.len() {
            let (a, b) = interval(e)?;
            if a.max(lo) > b.min(hi) {
                break;
            }
            lo = lo.max(a);
            hi = hi.min(b);
            e += 1;
        }
        let m = 0.5 * (lo + hi);
        let line = Segment {
            a: m,
            b: support_intercept(xs, ys, t, m),
        };
        lines.push(line);
        s = s.max(1) - 1;
        while s < xs.len() && line.eval(xs[s]) <= ys[s] + t * (1.0 + 1e-9) {
            s += 1;
        }
        s = s.max(e.min(xs.len()));
    }
    Some(lines)
}

/// Smallest maximum residual reachable by a greedy cover with `k` lines,
/// found by bisection on the tolerance.
fn minimax_fit(xs: &[f64], ys: &[f64], k: usize, upper: f64) -> Option<Vec<Segment>> {
    let diffs: Vec<f64> = xs
        .windows(2)
        .zip(ys.windows(2))
        .filter(|(x, _)| x[1] > x[0])
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect();
    let smax = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let smin = diffs.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smax.is_finite() && smin.is_finite()) {
        return None;
    }
    let pad = 1.0 + (smax - smin);
    let slopes = (smin - pad, smax + pad);
    let (mut lo, mut hi) = (0.0, upper);
    let mut best = greedy_cover(xs, ys, hi, k, slopes)?;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        match greedy_cover(xs, ys, mid, k, slopes) {
            Some(lines) => {
                best = lines;
                hi = mid;
            }
            None => lo = mid,
        }
        if hi - lo <= 1e-6 * upper {
            break;
        }
    }
    Some(best)
}

/// Fits `k` affine pieces whose minimum approximates concave samples.
///
/// Deterministic restarts of alternating least squares, plus a minimax cover
/// by supporting lines; the candidate with the smallest maximum residual
/// wins. Pieces come back sorted by non-increasing
/// slope (duplicates are kept so exactly `k` are returned).
pub fn fit_pwa(samples: &[(f64, f64)], k: usize) -> Result<Vec<Segment>, EnvelopeError> {
    if k == 0 || samples.len() < 2 * k {
        return Err(EnvelopeError::TooFewSamples {
            needed: 2 * k.max(1),
            got: samples.len(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let defect = concavity_defect(&sorted);
    if defect > CONCAVITY_TOL {
        return Err(EnvelopeError::NotConcave {
            defect,
            tol: CONCAVITY_TOL,
        });
    }

    // Normalize to the unit box for conditioning.
    let (x0, x1) = (sorted[0].0, sorted[sorted.len() - 1].0);
    let xscale = if x1 > x0 { x1 - x0 } else { 1.0 };
    let yscale = sorted
        .iter()
        .fold(0.0_f64, |m, s| m.max(s.1.abs()))
        .max(1e-300);
    let xs: Vec<f64> = sorted.iter().map(|s| (s.0 - x0) / xscale).collect();
    let ys: Vec<f64> = sorted.iter().map(|s| s.1 / yscale).collect();
    let n = xs.len();

    let by_x: Vec<usize> = xs
        .iter()
        .map(|&x| ((x * k as f64) as usize).min(k - 1))
        .collect();
    let by_count: Vec<usize> = (0..n).map(|i| (i * k / n).min(k - 1)).collect();
    let by_sqrt: Vec<usize> = xs
        .iter()
        .map(|&x| ((x.sqrt() * k as f64) as usize).min(k - 1))
        .collect();

    let mut best: Option<(f64, Vec<Segment>)> = None;
    for init in [by_x, by_count, by_sqrt] {
        let segs = fit_alternating(&xs, &ys, k, init);
        let res = max_residual(&segs, &xs, &ys);
        if best.as_ref().map_or(true, |b| res < b.0) {
            best = Some((res, segs));
        }
    }
    let ls_res = best.as_ref().map_or(1.0, |b| b.0);
    if ls_res > 1e-12 {
        if let Some(mut segs) = minimax_fit(&xs, &ys, k, ls_res.max(1e-12)) {
            while segs.len() < k {
                segs.push(segs[segs.len() - 1]);
            }
            let res = max_residual(&segs, &xs, &ys);
            if res < ls_res {
                best = Some((res, segs));
            }
        }
    }
    let (_, segs) = best.expect("at least one restart");
    let mut out: Vec<Segment> = segs
        .iter()
        .map(|s| {
            let a = s.a * yscale / xscale;
            Segment {
                a,
                b: s.b * yscale - a * x0,
            }
        })
        .collect();
    out.sort_by(|p, q| q.a.total_cmp(&p.a));
    Ok(out)
}

/// Concavity defect accepted by [`fit_pwa`]. A fit with two-sided errors can
/// halve the defect, so this admits samples whose best concave fit still meets
/// a 1% residual.
pub const CONCAVITY_TOL: f64 = 0.02;

/// Drops pieces that are never the minimum on `[k0, k1]` and orders the rest
/// by strictly decreasing slope.
pub fn prune_segments(segs: &[Segment], k0: f64, k1: f64) -> Vec<Segment> {
    let probes = 2001;
    let mut used = vec![false; segs.len()];
    for i in 0..probes {
        let x = k0 + (k1 - k0) * i as f64 / (probes - 1) as f64;
        let mut best = 0;
        for j in 1..segs.len() {
            let (vj, vb) = (segs[j].eval(x), segs[best].eval(x));
            if vj < vb || (vj == vb && segs[j].a > segs[best].a) {
                best = j;
            }
        }
        used[best] = true;
    }
    let mut out: Vec<Segment> = segs
        .iter()
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|(s, _)| *s)
        .collect();
    out.sort_by(|p, q| q.a.total_cmp(&p.a));
    out.dedup_by(|q, p| q.a == p.a);
    out
}

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Fingerprint of everything the envelope depends on.
pub fn fingerprint(
    params: &TurbineParams,
    surface: &AeroSurface,
    options: &EnvelopeOptions,
) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325;
    let mut feed = |v: f64| h = fnv1a(&v.to_le_bytes(), h);
    for v in surface
        .lambda_grid()
        .iter()
        .chain(surface.theta_grid())
        .chain(surface.cp_values())
    {
        feed(*v);
    }
    for v in [
        params.inertia,
        params.gearbox_ratio,
        params.rotor_radius,
        params.rotor_area,
        params.rho,
        params.omega_g_min,
        params.omega_g_max,
    ] {
        feed(v);
    }
    for v in [
        options.wind_min,
        options.wind_max,
        options.wind_step,
        options.segments as f64,
        options.fit_samples as f64,
        options.validation_samples as f64,
        options.residual_tol,
        matches!(options.side, FitSide::Inner) as u8 as f64,
    ] {
        feed(v);
    }
    h
}

fn uniform(k0: f64, k1: f64, n: usize, offset: f64) -> Vec<f64> {
    (0..n)
        .map(|i| k0 + (k1 - k0) * ((i as f64 + offset) / (n as f64 - 1.0 + 2.0 * offset)))
        .collect()
}

impl PwaEnvelope {
    /// Fits every grid wind speed in parallel.
    pub fn build(
        params: &TurbineParams,
        surface: &AeroSurface,
        options: &EnvelopeOptions,
    ) -> Result<Self, EnvelopeError> {
        options.validate()?;
        let wind_grid = options.wind_grid();
        let k_range = (params.k_min(), params.k_max());
        let fits: Vec<Result<(Vec<Segment>, f64), EnvelopeError>> = wind_grid
            .par_iter()
            .map(|&v| fit_wind(params, surface, options, v, k_range))
            .collect();
        let mut segments = Vec::with_capacity(wind_grid.len());
        let mut residuals = Vec::with_capacity(wind_grid.len());
        for f in fits {
            let (s, r) = f?;
            segments.push(s);
            residuals.push(r);
        }
        Ok(Self {
            wind_grid,
            segments,
            k: options.segments,
            k_range,
            residuals,
            fingerprint: fingerprint(params, surface, options),
        })
    }

    pub fn wind_range(&self) -> (f64, f64) {
        (self.wind_grid[0], self.wind_grid[self.wind_grid.len() - 1])
    }

    pub fn bracket(&self, v: f64) -> Result<WindBracket, EnvelopeError> {
        let (min, max) = self.wind_range();
        if !(v >= min && v <= max) {
            return Err(EnvelopeError::WindOutOfDomain { v, min, max });
        }
        let g = &self.wind_grid;
        if let Some(i) = g.iter().position(|&w| w == v) {
            return Ok(WindBracket {
                lower: i,
                upper: i,
                theta: 0.0,
            });
        }
        let upper = g.partition_point(|&w| w < v);
        let lower = upper - 1;
        Ok(WindBracket {
            lower,
            upper,
            theta: (v - g[lower]) / (g[upper] - g[lower]),
        })
    }

    /// `P̂_av` at grid index `i`.
    pub fn eval_grid(&self, i: usize, k: f64) -> f64 {
        let v = self.wind_grid[i];
        v.powi(3) * min_of_affine(&self.segments[i], k)
    }

    pub fn eval(&self, v: f64, k: f64) -> Result<f64, EnvelopeError> {
        let (k0, k1) = self.k_range;
        let tol = 1e-9 * k1;
        if !(k >= k0 - tol && k <= k1 + tol) {
            return Err(EnvelopeError::EnergyOutOfDomain {
                k,
                min: k0,
                max: k1,
            });
        }
        let br = self.bracket(v)?;
        let lo = self.eval_grid(br.lower, k);
        if br.lower == br.upper {
            return Ok(lo);
        }
        Ok((1.0 - br.theta) * lo + br.theta * self.eval_grid(br.upper, k))
    }

    /// Largest envelope value over the validity interval at wind `v`.
    pub fn max_over_k(&self, v: f64) -> Result<f64, EnvelopeError> {
        let (k0, k1) = self.k_range;
        // Concave in K: a ternary search is exact up to the tolerance.
        let (mut a, mut b) = (k0, k1);
        for _ in 0..200 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if self.eval(v, m1)? < self.eval(v, m2)? {
                a = m1;
            } else {
                b = m2;
            }
        }
        let mut best = self.eval(v, 0.5 * (a + b))?;
        for k in [k0, k1] {
            best = best.max(self.eval(v, k)?);
        }
        Ok(best)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CACHE_MAGIC}");
        let _ = writeln!(s, "fingerprint {:016x}", self.fingerprint);
        let _ = writeln!(s, "k {}", self.k);
        let _ = writeln!(s, "k_range {:e} {:e}", self.k_range.0, self.k_range.1);
        for ((v, segs), r) in self
            .wind_grid
            .iter()
            .zip(&self.segments)
            .zip(&self.residuals)
        {
            let _ = write!(s, "wind {v:e} {r:e} {}", segs.len());
            for seg in segs {
                let _ = write!(s, " {:e} {:e}", seg.a, seg.b);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(CACHE_MAGIC) {
            return Err("unknown cache format".into());
        }
        let mut fingerprint = None;
        let mut k = None;
        let mut k_range = None;
        let mut wind_grid = Vec::new();
        let mut segments = Vec::new();
        let mut residuals = Vec::new();
        let num = |t: Option<&str>| -> Result<f64, String> {
            t.ok_or("truncated line")?
                .parse::<f64>()
                .map_err(|e| e.to_string())
        };
        for line in lines {
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("fingerprint") => {
                    let t = tok.next().ok_or("missing fingerprint")?;
                    fingerprint = Some(u64::from_str_radix(t, 16).map_err(|e| e.to_string())?);
                }
                Some("k") => k = Some(num(tok.next())? as usize),
                Some("k_range") => k_range = Some((num(tok.next())?, num(tok.next())?)),
                Some("wind") => {
                    wind_grid.push(num(tok.next())?);
                    residuals.push(num(tok.next())?);
                    let count = num(tok.next())? as usize;
                    let mut segs = Vec::with_capacity(count);
                    for _ in 0..count {
                        segs.push(Segment {
                            a: num(tok.next())?,
                            b: num(tok.next())?,
                        });
                    }
                    segments.push(segs);
                }
                None => {}
                Some(other) => return Err(format!("unexpected record '{other}'")),
            }
        }
        if wind_grid.is_empty() {
            return Err("no wind records".into());
        }
        Ok(Self {
            wind_grid,
            segments,
            k: k.ok_or("missing k")?,
            k_range: k_range.ok_or("missing k_range")?,
            residuals,
            fingerprint: fingerprint.ok_or("missing fingerprint")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvelopeError> {
        let err = |e: std::io::Error| EnvelopeError::Cache {
            path: path.display().to_string(),
            msg: e.to_string(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(err)?;
        }
        std::fs::write(path, self.to_text()).map_err(err)
    }

    pub fn load(path: &Path) -> Result<Self, EnvelopeError> {
        let err = |msg: String| EnvelopeError::Cache {
            path: path.display().to_string(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_text(&text).map_err(err)
    }

    /// Loads the cache at `path` if it matches the inputs, otherwise builds
    /// and rewrites it.
    pub fn load_or_build(
        path: &Path,
        params: &TurbineParams,
        surface: &AeroSurface,
        options: &EnvelopeOptions,
    ) -> Result<Self, EnvelopeError> {
        let fp = fingerprint(params, surface, options);
        if let Ok(env) = Self::load(path) {
            if env.fingerprint == fp {
                return Ok(env);
            }
        }
        let env = Self::build(params, surface, options)?;
        env.save(path)?;
        Ok(env)
    }
}

fn fit_wind(
    params: &TurbineParams,
    surface: &AeroSurface,
    options: &EnvelopeOptions,
    v: f64,
    (k0, k1): (f64, f64),
) -> Result<(Vec<Segment>, f64), EnvelopeError> {
    let cube = v.powi(3);
    let samples = uniform(k0, k1, options.fit_samples, 0.0)
        .into_iter()
        .map(|k| Ok((k, available_power(params, surface, v, k)? / cube)))
        .collect::<Result<Vec<_>, EnvelopeError>>()?;
    let mut segs = fit_pwa(&samples, options.segments)?;

    let validation = uniform(k0, k1, options.validation_samples, 0.37)
        .into_iter()
        .chain([k0, k1])
        .map(|k| Ok((k, available_power(params, surface, v, k)? / cube)))
        .collect::<Result<Vec<_>, EnvelopeError>>()?;
    let all: Vec<(f64, f64)> = samples.iter().chain(&validation).copied().collect();
    if options.side == FitSide::Inner {
        let over = all
            .iter()
            .map(|&(k, p)| min_of_affine(&segs, k) - p)
            .fold(0.0, f64::max);
        for s in &mut segs {
            s.b -= over;
        }
    }
    let segs = prune_segments(&segs, k0, k1);
    let peak = all.iter().fold(0.0_f64, |m, s| m.max(s.1));
    let residual = validation
        .iter()
        .map(|&(k, p)| (min_of_affine(&segs, k) - p).abs())
        .fold(0.0, f64::max)
        / peak.max(1e-300);
    let tol = match options.side {
        FitSide::TwoSided => options.residual_tol,
        FitSide::Inner => 2.0 * options.residual_tol,
    };
    if residual > tol {
        return Err(EnvelopeError::ResidualTooLarge { v, residual, tol });
    }
    Ok((segs, residual))
}

/// Tangent of `f(K) = η_g T_g,max sqrt(2K/J)` at `K0`.
pub fn torque_limit_tangent(params: &TurbineParams, k0: f64) -> Segment {
    let f = params.eta_g * params.torque_g_max * (2.0 * k0 / params.inertia).sqrt();
    let a = params.eta_g * params.torque_g_max / (2.0 * params.inertia * k0).sqrt();
    Segment { a, b: f - a * k0 }
}

/// Tangent cuts at each point of `k_grid`; their minimum over-approximates
/// the concave torque-limited power curve.
pub fn torque_limit_cuts(params: &TurbineParams, k_grid: &[f64]) -> Vec<Segment> {
    k_grid
        .iter()
        .map(|&k| torque_limit_tangent(params, k))
        .collect()
}

/// `n` geometrically spaced tangent points on the speed-limit interval.
pub fn torque_cut_grid(params: &TurbineParams, n: usize) -> Vec<f64> {
    let (k0, k1) = (params.k_min(), params.k_max());
    let ratio = (k1 / k0).powf(1.0 / (n as f64 - 1.0));
    (0..n).map(|i| k0 * ratio.powi(i as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_linear_samples() {
        let c: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 3.5)).collect();
        let segs = fit_pwa(&c, 4).unwrap();
        assert_eq!(segs.len(), 4);
        for s in &segs {
            assert!(s.a.abs() < 1e-12 && (s.b - 3.5).abs() < 1e-12);
        }
        let l: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 2.0 * i as f64)).collect();
        for s in fit_pwa(&l, 3).unwrap() {
            assert!((s.a - 2.0).abs() < 1e-9 && s.b.abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_convex_and_short_inputs() {
        let convex: Vec<(f64, f64)> = (0..30).map(|i| (i as f64, (i * i) as f64)).collect();
        assert!(matches!(
            fit_pwa(&convex, 3),
            Err(EnvelopeError::NotConcave { .. })
        ));
        let short: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 1.0)).collect();
        assert!(matches!(
            fit_pwa(&short, 3),
            Err(EnvelopeError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn concavity_defect_of_a_dip() {
        let s = vec![(0.0, 0.0), (1.0, 0.5), (2.0, 1.0)];
        assert!(concavity_defect(&s) < 1e-15);
        let s = vec![(0.0, 0.0), (1.0, 0.4), (2.0, 1.0)];
        assert!((concavity_defect(&s) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn tangents_touch_and_majorize() {
        let p = TurbineParams::default();
        let grid = torque_cut_grid(&p, 8);
        let cuts = torque_limit_cuts(&p, &grid);
        let f = |k: f64| p.eta_g * p.torque_g_max * (2.0 * k / p.inertia).sqrt();
        for (k0, c) in grid.iter().zip(&cuts) {
            assert!((c.eval(*k0) - f(*k0)).abs() <= 1e-9 * f(*k0));
            for k in [0.5 * k0, 1.7 * k0] {
                assert!(c.eval(k) >= f(k));
            }
        }
    }

    #[test]
    fn bracket_and_pruning() {
        let env = PwaEnvelope {
            wind_grid: vec![6.0, 7.0, 8.0],
            segments: vec![vec![Segment { a: 0.0, b: 1.0 }]; 3],
            k: 1,
            k_range: (0.0, 1.0),
            residuals: vec![0.0; 3],
            fingerprint: 0,
        };
        assert_eq!(
            env.bracket(7.0).unwrap(),
            WindBracket {
                lower: 1,
                upper: 1,
                theta: 0.0
            }
        );
        let b = env.bracket(7.25).unwrap();
        assert_eq!((b.lower, b.upper), (1, 2));
        assert!((b.theta - 0.25).abs() < 1e-15);
        assert!(env.bracket(8.5).is_err());
        assert!(env.eval(7.0, 1.5).is_err());

        let segs = [
            Segment { a: 1.0, b: 0.0 },
            Segment { a: 0.0, b: 0.5 },
            Segment { a: 0.0, b: 0.7 },
            Segment { a: -1.0, b: 2.0 },
        ];
        let p = prune_segments(&segs, 0.0, 1.0);
        assert_eq!(
            p,
            vec![Segment { a: 1.0, b: 0.0 }, Segment { a: 0.0, b: 0.5 }]
        );
    }

    #[test]
    fn cache_text_round_trip() {
        let env = PwaEnvelope {
            wind_grid: vec![6.0, 6.5],
            segments: vec![
                vec![Segment { a: 1e-7, b: 0.3 }, Segment { a: -2e-8, b: 0.9 }],
                vec![Segment { a: 3.0, b: -1.0 }],
            ],
            k: 2,
            k_range: (1.0e6, 3.5e7),
            residuals: vec![0.004, 0.006],
            fingerprint: 0xdead_beef,
        };
        let back = PwaEnvelope::from_text(&env.to_text()).unwrap();
        assert_eq!(back, env);
        assert!(PwaEnvelope::from_text("junk").is_err());
    }
}
