use std::sync::OnceLock;

use downreg_core::aero::AeroSurface;
use downreg_core::envelope::{
    available_power, fit_pwa, min_of_affine, torque_cut_grid, torque_limit_cuts, tsr_from_energy,
    EnvelopeError, EnvelopeOptions, PwaEnvelope, Segment,
};
use downreg_core::turbine::TurbineParams;
use proptest::prelude::*;

fn setup() -> &'static (TurbineParams, AeroSurface, PwaEnvelope) {
    static CELL: OnceLock<(TurbineParams, AeroSurface, PwaEnvelope)> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = TurbineParams::default();
        let s = AeroSurface::parametric_default();
        let env = PwaEnvelope::build(&p, &s, &EnvelopeOptions::default()).unwrap();
        (p, s, env)
    })
}

/// Available power by brute-force pitch scan.
fn scan_power(p: &TurbineParams, s: &AeroSurface, v: f64, k: f64) -> f64 {
    let lambda = tsr_from_energy(p, v, k);
    let (t0, t1) = s.theta_range();
    let mut best = f64::NEG_INFINITY;
    for i in 0..=20_000 {
        let t = t0 + (t1 - t0) * i as f64 / 20_000.0;
        best = best.max(s.cp(lambda, t).unwrap());
    }
    (0.5 * p.rho * p.rotor_area * v.powi(3) * best).max(0.0)
}

fn peak_power(p: &TurbineParams, s: &AeroSurface, v: f64) -> f64 {
    (0..=400)
        .map(|i| {
            let k = p.k_min() + (p.k_max() - p.k_min()) * i as f64 / 400.0;
            available_power(p, s, v, k).unwrap()
        })
        .fold(0.0, f64::max)
}

#[test]
fn available_power_at_optimal_tip_speed_ratio() {
    let (p, s, _) = setup();
    let (lambda_opt, _, _) = s.optimum();
    let omega = p.omega_for_tsr(lambda_opt, 8.0);
    let k = p.kinetic_energy(omega);
    let direct = available_power(p, s, 8.0, k).unwrap();
    let oracle = scan_power(p, s, 8.0, k);
    assert!(
        (direct - oracle).abs() <= 1e-6 * oracle,
        "{direct} vs {oracle}"
    );
    // At the global optimum this is the textbook formula.
    let (_, _, cp_max) = s.optimum();
    let textbook = 0.5 * p.rho * p.rotor_area * 512.0 * cp_max;
    assert!((direct - textbook).abs() <= 1e-6 * textbook);
}

#[test]
fn available_power_grows_with_wind_at_matched_tsr() {
    let (p, s, _) = setup();
    for lambda in [4.0, 6.0, 8.0] {
        let k8 = p.kinetic_energy(p.omega_for_tsr(lambda, 8.0));
        let k10 = p.kinetic_energy(p.omega_for_tsr(lambda, 10.0));
        let a = available_power(p, s, 8.0, k8).unwrap();
        let b = available_power(p, s, 10.0, k10).unwrap();
        assert!(b >= a);
        assert!((b / a - (10.0f64 / 8.0).powi(3)).abs() < 1e-9);
    }
}

#[test]
fn available_power_is_clamped_at_zero() {
    let p = TurbineParams::default();
    let lambda: Vec<f64> = (0..15).map(|i| 1.0 + i as f64).collect();
    let theta: Vec<f64> = (0..6).map(|j| 0.1 * j as f64).collect();
    let cp = vec![-0.1; lambda.len() * theta.len()];
    let ct = vec![0.5; lambda.len() * theta.len()];
    let s = AeroSurface::from_tables(lambda, theta, cp, ct).unwrap();
    let k = p.kinetic_energy(p.omega_for_tsr(7.0, 8.0));
    assert_eq!(available_power(&p, &s, 8.0, k).unwrap(), 0.0);
}

#[test]
fn available_power_outside_the_table_is_an_error() {
    let (p, s, _) = setup();
    // 3 m/s at rated speed implies λ far above the table.
    assert!(matches!(
        available_power(p, s, 3.0, p.k_max()),
        Err(EnvelopeError::Aero(_))
    ));
}

/// Alternating partition / least-squares oracle, written independently of
/// the library fitter.
fn alternating_oracle(xs: &[f64], ys: &[f64], k: usize) -> Vec<(f64, f64)> {
    let n = xs.len();
    let mut labels: Vec<usize> = (0..n).map(|i| i * k / n).collect();
    let mut lines = vec![(0.0, 0.0); k];
    for _ in 0..100 {
        for (j, line) in lines.iter_mut().enumerate() {
            let pts: Vec<usize> = (0..n).filter(|&i| labels[i] == j).collect();
            if pts.len() < 2 {
                continue;
            }
            let m = pts.len() as f64;
            let (sx, sy): (f64, f64) = pts
                .iter()
                .fold((0.0, 0.0), |a, &i| (a.0 + xs[i], a.1 + ys[i]));
            let (mx, my) = (sx / m, sy / m);
            let sxx: f64 = pts.iter().map(|&i| (xs[i] - mx).powi(2)).sum();
            let sxy: f64 = pts.iter().map(|&i| (xs[i] - mx) * (ys[i] - my)).sum();
            let slope = sxy / sxx;
            *line = (slope, my - slope * mx);
        }
        let next: Vec<usize> = xs
            .iter()
            .map(|&x| {
                (0..k)
                    .min_by(|&a, &b| {
                        (lines[a].0 * x + lines[a].1).total_cmp(&(lines[b].0 * x + lines[b].1))
                    })
                    .unwrap()
            })
            .collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    lines
}

#[test]
fn sqrt_fit_matches_alternating_oracle() {
    let xs: Vec<f64> = (0..120).map(|i| 1.0 + 3.0 * i as f64 / 119.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.sqrt()).collect();
    let samples: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    let segs = fit_pwa(&samples, 3).unwrap();
    assert_eq!(segs.len(), 3);
    assert!(segs.windows(2).all(|w| w[0].a >= w[1].a));

    let residual = |f: &dyn Fn(f64) -> f64| {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| (f(x) - y).abs())
            .fold(0.0, f64::max)
    };
    let ours = residual(&|x| min_of_affine(&segs, x));
    let oracle_lines = alternating_oracle(&xs, &ys, 3);
    let oracle = residual(&|x| {
        oracle_lines
            .iter()
            .map(|l| l.0 * x + l.1)
            .fold(f64::INFINITY, f64::min)
    });
    assert!(ours <= 0.01 * 2.0, "residual {ours}");
    assert!(
        ours <= oracle * (1.0 + 1e-9),
        "ours {ours} vs oracle {oracle}"
    );
}

#[test]
fn torque_cuts_over_approximate_within_half_percent() {
    let p = TurbineParams::default();
    let grid = torque_cut_grid(&p, 8);
    let cuts = torque_limit_cuts(&p, &grid);
    let f = |k: f64| p.eta_g * p.torque_g_max * (2.0 * k / p.inertia).sqrt();
    let (k0, k1) = (grid[0], grid[grid.len() - 1]);
    let mut worst = 0.0_f64;
    for i in 0..=10_000 {
        let k = k0 + (k1 - k0) * i as f64 / 10_000.0;
        let approx = min_of_affine(&cuts, k);
        assert!(approx >= f(k) * (1.0 - 1e-12));
        worst = worst.max((approx - f(k)) / f(k));
    }
    assert!(worst <= 0.005, "over-approximation {worst}");
}

#[test]
fn envelope_invariants_on_default_grid() {
    let (p, s, env) = setup();
    let (k0, k1) = env.k_range;
    for (i, segs) in env.segments.iter().enumerate() {
        assert!(!segs.is_empty() && segs.len() <= env.k);
        assert!(
            segs.windows(2).all(|w| w[0].a > w[1].a),
            "slopes at index {i}"
        );
        let v = env.wind_grid[i];
        let peak = peak_power(p, s, v);
        for j in 0..=200 {
            let k = k0 + (k1 - k0) * (j as f64 + 0.5) / 201.0;
            let fit = env.eval_grid(i, k);
            let truth = available_power(p, s, v, k).unwrap();
            assert!(fit >= 0.0);
            assert!(
                (fit - truth).abs() <= 0.01 * peak,
                "v={v} K={k}: {fit} vs {truth}"
            );
        }
    }
}

#[test]
fn grid_points_and_midpoints_interpolate() {
    let (_, _, env) = setup();
    let k = 0.5 * (env.k_range.0 + env.k_range.1);
    assert_eq!(
        env.eval(8.0, k).unwrap(),
        env.eval_grid(env.wind_grid.iter().position(|&w| w == 8.0).unwrap(), k)
    );
    let (a, b) = (env.eval(8.0, k).unwrap(), env.eval(8.5, k).unwrap());
    assert!((env.eval(8.25, k).unwrap() - 0.5 * (a + b)).abs() <= 1e-9 * a);
    assert!(env.eval(5.0, k).is_err());
    assert!(env.eval(8.0, 2.0 * env.k_range.1).is_err());
}

#[test]
fn envelope_cache_is_reused_and_invalidated() {
    let (p, s, env) = setup();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("env.txt");
    env.save(&path).unwrap();
    let opts = EnvelopeOptions::default();
    let loaded = PwaEnvelope::load_or_build(&path, p, s, &opts).unwrap();
    assert_eq!(&loaded, env);

    let narrow = EnvelopeOptions {
        wind_min: 7.0,
        wind_max: 9.0,
        ..opts
    };
    let rebuilt = PwaEnvelope::load_or_build(&path, p, s, &narrow).unwrap();
    assert_eq!(rebuilt.wind_grid, vec![7.0, 7.5, 8.0, 8.5, 9.0]);
    assert_eq!(PwaEnvelope::load(&path).unwrap(), rebuilt);
}

#[test]
fn inner_fit_never_exceeds_available_power() {
    let (p, s, _) = setup();
    let opts = EnvelopeOptions {
        wind_min: 8.0,
        wind_max: 8.0,
        side: downreg_core::envelope::FitSide::Inner,
        ..Default::default()
    };
    let env = PwaEnvelope::build(p, s, &opts).unwrap();
    let (k0, k1) = env.k_range;
    for j in 0..=199 {
        let k = k0 + (k1 - k0) * j as f64 / 199.0;
        assert!(env.eval(8.0, k).unwrap() <= available_power(p, s, 8.0, k).unwrap() * (1.0 + 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_points_within_two_percent(v in 6.0f64..12.0, u in 0.0f64..1.0) {
        let (p, s, env) = setup();
        let k = env.k_range.0 + u * (env.k_range.1 - env.k_range.0);
        let fit = env.eval(v, k).unwrap();
        let truth = scan_power(p, s, v, k);
        let peak = peak_power(p, s, v);
        prop_assert!((fit - truth).abs() <= 0.02 * peak, "{} vs {}", fit, truth);
    }

    #[test]
    fn interpolated_envelope_is_concave_in_energy(v in 6.0f64..12.0, u in 0.02f64..0.98, du in 1e-3f64..0.02) {
        let (_, _, env) = setup();
        let (k0, k1) = env.k_range;
        let k = k0 + u * (k1 - k0);
        let h = du * (k1 - k0);
        let scale = env.eval(v, k).unwrap().abs().max(1.0);
        let second = env.eval(v, k + h).unwrap() - 2.0 * env.eval(v, k).unwrap() + env.eval(v, k - h).unwrap();
        prop_assert!(second <= 1e-9 * scale);
    }

    #[test]
    fn fit_of_random_concave_quadratics(c in 0.1f64..5.0, m in -2.0f64..2.0, k in 2usize..7) {
        let samples: Vec<(f64, f64)> = (0..100).map(|i| {
            let x = i as f64 / 99.0;
            (x, 10.0 + m * x - c * x * x)
        }).collect();
        let segs: Vec<Segment> = fit_pwa(&samples, k).unwrap();
        prop_assert_eq!(segs.len(), k);
        prop_assert!(segs.windows(2).all(|w| w[0].a >= w[1].a));
        // Minimax error of k pieces on a parabola is c / (8 k²) on the unit interval.
        let bound = c / (8.0 * (k * k) as f64) * (1.0 + 1e-6) + 1e-9;
        let worst = samples.iter().map(|&(x, y)| (min_of_affine(&segs, x) - y).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= bound, "{} > {}", worst, bound);
    }
}
