//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use downreg_core::qp::{QpProblem, SparseMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense mirror of a [`QpProblem`] for the reference solver.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_in: Vec<Vec<f64>>,
    pub b_in: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    /// A strictly interior-to-the-box feasible point used to generate it.
    pub z0: Vec<f64>,
}

impl DenseQp {
    pub fn to_problem(&self) -> QpProblem {
        let n = self.g.len();
        QpProblem {
            h: SparseMatrix::from_dense(&self.h, n),
            g: self.g.clone(),
            a_eq: SparseMatrix::from_dense(&self.a_eq, n),
            b_eq: self.b_eq.clone(),
            a_in: SparseMatrix::from_dense(&self.a_in, n),
            b_in: self.b_in.clone(),
            lb: self.lb.clone(),
            ub: self.ub.clone(),
        }
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let n = z.len();
        let mut f = 0.0;
        for i in 0..n {
            f += self.g[i] * z[i];
            for j in 0..n {
                f += 0.5 * z[i] * self.h[i][j] * z[j];
            }
        }
        f
    }

    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (row, b) in self.a_eq.iter().zip(&self.b_eq) {
            worst = worst.max((dot(row, z) - b).abs());
        }
        for (row, b) in self.a_in.iter().zip(&self.b_in) {
            worst = worst.max(dot(row, z) - b);
        }
        for i in 0..z.len() {
            worst = worst.max(self.lb[i] - z[i]).max(z[i] - self.ub[i]);
        }
        worst
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random feasible bounded convex QP: PSD (possibly singular) Hessian, finite
/// box, equalities and inequalities built around a point inside the box.
pub fn random_qp(rng: &mut ChaCha8Rng, max_n: usize, max_constraints: usize) -> DenseQp {
    let n = rng.gen_range(2..=max_n);
    let rank = rng.gen_range(0..=n);
    let m: Vec<Vec<f64>> = (0..rank)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            h[i][j] = (0..rank).map(|k| m[k][i] * m[k][j]).sum();
        }
    }
    let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let bound = rng.gen_range(1.0..5.0);
    let lb = vec![-bound; n];
    let ub = vec![bound; n];
    let z0: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(-0.8 * bound..0.8 * bound))
        .collect();

    let total = rng.gen_range(0..=max_constraints);
    let n_eq = rng.gen_range(0..=total.min(n - 1).min(3));
    let n_in = total - n_eq;
    let row = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|_| {
                if rng.gen_bool(0.7) {
                    rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let a_eq: Vec<Vec<f64>> = (0..n_eq).map(|_| row(rng)).collect();
    let b_eq: Vec<f64> = a_eq.iter().map(|r| dot(r, &z0)).collect();
    let a_in: Vec<Vec<f64>> = (0..n_in).map(|_| row(rng)).collect();
    let b_in: Vec<f64> = a_in
        .iter()
        .map(|r| {
            dot(r, &z0)
                + if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(0.0..1.0)
                }
        })
        .collect();
    DenseQp {
        h,
        g,
        a_eq,
        b_eq,
        a_in,
        b_in,
        lb,
        ub,
        z0,
    }
}

/// Reference solver: proximal augmented Lagrangian on the general
/// constraints, each subproblem solved by projected accelerated gradient
/// (FISTA with adaptive restart) on the box.
pub fn reference_qp(p: &DenseQp) -> Vec<f64> {
    // Unit-norm rows keep the penalty equally effective on every constraint.
    let mut p = p.clone();
    for (rows, rhs) in [(&mut p.a_eq, &mut p.b_eq), (&mut p.a_in, &mut p.b_in)] {
        for (row, b) in rows.iter_mut().zip(rhs.iter_mut()) {
            let norm = dot(row, row).sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
                *b /= norm;
            }
        }
    }
    let p = &p;
    let n = p.g.len();
    let rho = 10.0;
    let tau = 1.0;
    let mut lam = vec![0.0; p.a_eq.len()];
    let mut mu = vec![0.0; p.a_in.len()];
    let mut z: Vec<f64> = p.z0.clone();

    // Lipschitz bound of the inner gradient via Frobenius norms.
    let fro = |a: &[Vec<f64>]| a.iter().flatten().map(|v| v * v).sum::<f64>();
    let lip = fro(&p.h).sqrt() + rho * (fro(&p.a_eq) + fro(&p.a_in)) + 1.0 / tau;
    let step = 1.0 / lip;
    let proj = |v: &mut [f64]| {
        for i in 0..v.len() {
            v[i] = v[i].clamp(p.lb[i], p.ub[i]);
        }
    };

    for _outer in 0..2000 {
        let center = z.clone();
        let grad = |x: &[f64]| -> Vec<f64> {
            let mut gr = vec![0.0; n];
            for i in 0..n {
                gr[i] = p.g[i] + dot(&p.h[i], x) + (x[i] - center[i]) / tau;
            }
            for (k, row) in p.a_eq.iter().enumerate() {
                let r = dot(row, x) - p.b_eq[k] + lam[k] / rho;
                for i in 0..n {
                    gr[i] += rho * r * row[i];
                }
            }
            for (k, row) in p.a_in.iter().enumerate() {
                let r = (dot(row, x) - p.b_in[k] + mu[k] / rho).max(0.0);
                for i in 0..n {
                    gr[i] += rho * r * row[i];
                }
            }
            gr
        };
        let mut x = z.clone();
        let mut yk = x.clone();
        let mut t = 1.0_f64;
        for _ in 0..50_000 {
            let gr = grad(&yk);
            let mut xn: Vec<f64> = (0..n).map(|i| yk[i] - step * gr[i]).collect();
            proj(&mut xn);
            let moved = (0..n).map(|i| (xn[i] - x[i]).abs()).fold(0.0, f64::max);
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            // Gradient-based restart keeps the momentum monotone.
            let restart = (0..n)
                .map(|i| (yk[i] - xn[i]) * (xn[i] - x[i]))
                .sum::<f64>()
                > 0.0;
            let beta = if restart { 0.0 } else { (t - 1.0) / tn };
            yk = (0..n).map(|i| xn[i] + beta * (xn[i] - x[i])).collect();
            t = if restart { 1.0 } else { tn };
            x = xn;
            if moved < 1e-15 {
                break;
            }
        }
        let change = (0..n).map(|i| (x[i] - z[i]).abs()).fold(0.0, f64::max);
        z = x;
        let mut viol = 0.0_f64;
        for (k, row) in p.a_eq.iter().enumerate() {
            let r = dot(row, &z) - p.b_eq[k];
            lam[k] += rho * r;
            viol = viol.max(r.abs());
        }
        for (k, row) in p.a_in.iter().enumerate() {
            let r = dot(row, &z) - p.b_in[k];
            mu[k] = (mu[k] + rho * r).max(0.0);
            viol = viol.max(r);
        }
        if change < 1e-12 && viol < 1e-11 {
            break;
        }
    }
    z
}
