//! ADMM iterations, scaling and solution polishing.

use super::ldl::{LdlFactor, LdlSymbolic};
use super::{
    kkt_residual, violation, Duals, QpError, QpProblem, QpSolution, QpStatus, SparseMatrix,
};
use super::{FEASIBILITY_TOLERANCE, KKT_TOLERANCE};

const PLAIN_ACCEPT_EPS: f64 = 1e-7;
const POLISH_PROBE_INTERVAL: usize = 50;
const POLISH_CORRECTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    /// Initial ADMM stopping tolerances; tightened automatically when the
    /// polished point fails certification.
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in (0, 2).
    pub alpha: f64,
    pub scaling_iters: usize,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub check_interval: usize,
    pub polish: bool,
    pub polish_delta: f64,
    pub polish_refine_iters: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 4000,
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            eps_infeasible: 1e-5,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_iters: 10,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            check_interval: 5,
            polish: true,
            polish_delta: 1e-7,
            polish_refine_iters: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RowKind {
    Eq(usize),
    In(usize),
    Box(usize),
}

/// The problem in stacked `l ≤ C z ≤ u` form, with Ruiz equilibration.
struct Scaled {
    n: usize,
    kinds: Vec<RowKind>,
    p: SparseMatrix,
    q: Vec<f64>,
    a: SparseMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn scaling_factor(norm: f64) -> f64 {
    if norm < 1e-4 {
        1.0
    } else {
        1.0 / norm.min(1e4).sqrt()
    }
}

impl Scaled {
    fn new(problem: &QpProblem, iters: usize) -> Self {
        let n = problem.n();
        let mut kinds = Vec::new();
        let mut l = Vec::new();
        let mut u = Vec::new();
        let mut t = Vec::new();
        for r in 0..problem.a_eq.nrows() {
            let row = kinds.len();
            t.extend(problem.a_eq.row(r).map(|(c, v)| (row, c, v)));
            kinds.push(RowKind::Eq(r));
            l.push(problem.b_eq[r]);
            u.push(problem.b_eq[r]);
        }
        for r in 0..problem.a_in.nrows() {
            if problem.b_in[r] == f64::INFINITY {
                continue;
            }
            let row = kinds.len();
            t.extend(problem.a_in.row(r).map(|(c, v)| (row, c, v)));
            kinds.push(RowKind::In(r));
            l.push(f64::NEG_INFINITY);
            u.push(problem.b_in[r]);
        }
        for i in 0..n {
            if problem.lb[i].is_finite() || problem.ub[i].is_finite() {
                let row = kinds.len();
                t.push((row, i, 1.0));
                kinds.push(RowKind::Box(i));
                l.push(problem.lb[i]);
                u.push(problem.ub[i]);
            }
        }
        let m = kinds.len();
        let mut a = SparseMatrix::from_triplets(m, n, &t);
        let mut p = problem.h.clone();
        let mut q = problem.g.clone();
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];

        for _ in 0..iters {
            let pc = p.col_inf_norms();
            let ac = a.col_inf_norms();
            let dx: Vec<f64> = (0..n).map(|j| scaling_factor(pc[j].max(ac[j]))).collect();
            let dz: Vec<f64> = (0..m).map(|r| scaling_factor(a.row_inf_norm(r))).collect();
            p.scale(&dx, &dx);
            a.scale(&dz, &dx);
            for j in 0..n {
                q[j] *= dx[j];
                d[j] *= dx[j];
            }
            for r in 0..m {
                e[r] *= dz[r];
            }
        }
        let pc = p.col_inf_norms();
        let mean_p = if n > 0 {
            pc.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let c = scaling_factor(mean_p.max(inf_norm(&q))).powi(2);
        p.scale_all(c);
        for v in &mut q {
            *v *= c;
        }
        for r in 0..m {
            l[r] *= e[r];
            u[r] *= e[r];
        }
        Self {
            n,
            kinds,
            p,
            q,
            a,
            l,
            u,
            d,
            e,
            c,
        }
    }

    fn m(&self) -> usize {
        self.kinds.len()
    }

    fn is_eq(&self, r: usize) -> bool {
        self.l[r] == self.u[r]
    }

    fn unscale_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.d).map(|(a, b)| a * b).collect()
    }

    fn unscale_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.e).map(|(a, b)| a * b / self.c).collect()
    }

    /// Splits stacked multipliers into the public form. With `clean`, the
    /// one-sided parts are clipped to their sign.
    fn duals(&self, problem: &QpProblem, y: &[f64], clean: bool) -> Duals {
        let n = self.n;
        let mut duals = Duals {
            eq: vec![0.0; problem.a_eq.nrows()],
            ineq: vec![0.0; problem.a_in.nrows()],
            lower: vec![0.0; n],
            upper: vec![0.0; n],
        };
        for (r, kind) in self.kinds.iter().enumerate() {
            match *kind {
                RowKind::Eq(i) => duals.eq[i] = y[r],
                RowKind::In(i) => duals.ineq[i] = if clean { y[r].max(0.0) } else { y[r] },
                RowKind::Box(i) => {
                    duals.upper[i] = y[r].max(0.0);
                    duals.lower[i] = (-y[r]).max(0.0);
                }
            }
        }
        duals
    }

    fn kkt_entries(&self, rho: &[f64], sigma: f64) -> Vec<(usize, usize, f64)> {
        let n = self.n;
        let mut t: Vec<(usize, usize, f64)> = self
            .p
            .triplets()
            .into_iter()
            .filter(|&(r, c, _)| r >= c)
            .collect();
        t.extend((0..n).map(|i| (i, i, sigma)));
        t.extend(self.a.triplets().into_iter().map(|(r, c, v)| (n + r, c, v)));
        t.extend(
            rho.iter()
                .enumerate()
                .map(|(r, &p)| (n + r, n + r, -1.0 / p)),
        );
        t
    }
}

/// Rows guessed active from the ADMM iterate, with the bound they sit on.
fn active_set(sc: &Scaled, z: &[f64], y: &[f64]) -> Vec<(usize, f64)> {
    let mut active = Vec::new();
    for r in 0..sc.m() {
        if sc.is_eq(r) || (sc.l[r].is_finite() && z[r] - sc.l[r] < -y[r]) {
            active.push((r, sc.l[r]));
        } else if sc.u[r].is_finite() && sc.u[r] - z[r] < y[r] {
            active.push((r, sc.u[r]));
        }
    }
    active
}

struct Certified {
    z: Vec<f64>,
    duals: Duals,
    kkt: f64,
}

fn certify(problem: &QpProblem, scaled: &Scaled, x: &[f64], y: &[f64]) -> (Certified, bool) {
    let z = scaled.unscale_x(x);
    let yu = scaled.unscale_y(y);
    let raw = scaled.duals(problem, &yu, false);
    let kkt = kkt_residual(problem, &z, &raw);
    let ok = kkt <= KKT_TOLERANCE && violation(problem, &z) <= FEASIBILITY_TOLERANCE;
    (
        Certified {
            z,
            duals: scaled.duals(problem, &yu, true),
            kkt,
        },
        ok,
    )
}

impl QpSettings {
    /// Solves `problem`, optionally warm-started from a primal point and
    /// multipliers (in the layout of [`Duals`]).
    pub fn solve(
        &self,
        problem: &QpProblem,
        warm_z: Option<&[f64]>,
        warm_duals: Option<&Duals>,
    ) -> Result<QpSolution, QpError> {
        problem.check_dimensions()?;
        let n = problem.n();
        if let Some(z0) = warm_z {
            if z0.len() != n {
                return Err(QpError::DimensionMismatch("warm start length".into()));
            }
        }
        if (0..n).any(|i| problem.lb[i] > problem.ub[i]) {
            let z: Vec<f64> = (0..n)
                .map(|i| problem.lb[i].max(problem.ub[i].min(0.0)))
                .collect();
            return Ok(self.finish(
                problem,
                z,
                Duals::default(),
                QpStatus::Infeasible,
                f64::INFINITY,
                0,
                false,
                self.rho,
            ));
        }

        let sc = Scaled::new(problem, self.scaling_iters);
        let m = sc.m();

        let mut x = vec![0.0; n];
        if let Some(z0) = warm_z {
            for j in 0..n {
                x[j] = z0[j] / sc.d[j];
            }
        }
        let mut y = vec![0.0; m];
        if let Some(w) = warm_duals {
            for (r, kind) in sc.kinds.iter().enumerate() {
                let yu = match *kind {
                    RowKind::Eq(i) => w.eq.get(i).copied().unwrap_or(0.0),
                    RowKind::In(i) => w.ineq.get(i).copied().unwrap_or(0.0),
                    RowKind::Box(i) => {
                        w.upper.get(i).copied().unwrap_or(0.0)
                            - w.lower.get(i).copied().unwrap_or(0.0)
                    }
                };
                y[r] = sc.c * yu / sc.e[r];
            }
        }
        let project = |r: usize, v: f64| v.max(sc.l[r]).min(sc.u[r]);
        let ax0 = sc.a.mul_vec(&x);
        let mut z: Vec<f64> = (0..m).map(|r| project(r, ax0[r])).collect();

        let mut rho_base = self.rho;
        let rho_vec = |base: f64| -> Vec<f64> {
            (0..m)
                .map(|r| if sc.is_eq(r) { 1e3 * base } else { base })
                .collect()
        };
        let mut rho = rho_vec(rho_base);
        let entries = sc.kkt_entries(&rho, self.sigma);
        let sym = LdlSymbolic::analyze(n + m, &entries);
        let mut kkt = match LdlFactor::factor(&sym, &entries) {
            Ok(f) => f,
            Err(_) => return Err(QpError::NotPsd),
        };

        let mut eps_abs = self.eps_abs;
        let mut eps_rel = self.eps_rel;
        let mut y_prev = y.clone();
        let mut rhs = vec![0.0; n + m];
        let mut last_active: Option<Vec<(usize, f64)>> = None;

        for iter in 1..=self.max_iter {
            y_prev.copy_from_slice(&y);
            for j in 0..n {
                rhs[j] = self.sigma * x[j] - sc.q[j];
            }
            for r in 0..m {
                rhs[n + r] = z[r] - y[r] / rho[r];
            }
            kkt.solve(&mut rhs);
            for j in 0..n {
                x[j] = self.alpha * rhs[j] + (1.0 - self.alpha) * x[j];
            }
            for r in 0..m {
                let z_tilde = z[r] + (rhs[n + r] - y[r]) / rho[r];
                let z_relax = self.alpha * z_tilde + (1.0 - self.alpha) * z[r];
                let z_new = project(r, z_relax + y[r] / rho[r]);
                y[r] += rho[r] * (z_relax - z_new);
                z[r] = z_new;
            }

            let check = iter % self.check_interval == 0 || iter == self.max_iter;
            let adapt = self.adaptive_rho && iter % self.adaptive_rho_interval == 0;
            if !(check || adapt) {
                continue;
            }

            // Residuals in unscaled units.
            let ax = sc.a.mul_vec(&x);
            let px = sc.p.mul_vec(&x);
            let aty = sc.a.mul_t_vec(&y);
            let prim = (0..m)
                .map(|r| ((ax[r] - z[r]) / sc.e[r]).abs())
                .fold(0.0, f64::max);
            let prim_scale = (0..m)
                .map(|r| (ax[r] / sc.e[r]).abs().max((z[r] / sc.e[r]).abs()))
                .fold(0.0, f64::max);
            let dual = (0..n)
                .map(|j| ((px[j] + sc.q[j] + aty[j]) / sc.d[j]).abs())
                .fold(0.0, f64::max)
                / sc.c;
            let dual_scale = (0..n)
                .map(|j| {
                    (px[j] / sc.d[j])
                        .abs()
                        .max((aty[j] / sc.d[j]).abs())
                        .max((sc.q[j] / sc.d[j]).abs())
                })
                .fold(0.0, f64::max)
                / sc.c;

            if check {
                let eps_p = eps_abs + eps_rel * prim_scale;
                let eps_d = eps_abs + eps_rel * dual_scale;
                let converged = prim <= eps_p && dual <= eps_d;
                // Polish on convergence, and opportunistically whenever the
                // active-set guess changes; ADMM can creep slowly on
                // degenerate problems whose active set is already settled.
                if self.polish && (converged || iter % POLISH_PROBE_INTERVAL == 0) {
                    let active = active_set(&sc, &z, &y);
                    if last_active.as_ref() != Some(&active) {
                        if let Some(pol) = self.polish(problem, &sc, active.clone()) {
                            return Ok(self.finish(
                                problem,
                                pol.z,
                                pol.duals,
                                QpStatus::Optimal,
                                pol.kkt,
                                iter,
                                true,
                                rho_base,
                            ));
                        }
                        last_active = Some(active);
                    }
                }
                if converged {
                    // Without a successful polish, only accept the raw iterate
                    // once the ADMM tolerances are tight.
                    if !self.polish || eps_abs <= PLAIN_ACCEPT_EPS {
                        let (plain, plain_ok) = certify(problem, &sc, &x, &y);
                        if plain_ok {
                            return Ok(self.finish(
                                problem,
                                plain.z,
                                plain.duals,
                                QpStatus::Optimal,
                                plain.kkt,
                                iter,
                                false,
                                rho_base,
                            ));
                        }
                    }
                    eps_abs = (eps_abs * 0.1).max(1e-12);
                    eps_rel = (eps_rel * 0.1).max(1e-12);
                }
                if self.primal_infeasible(&sc, &y, &y_prev) {
                    let zu = sc.unscale_x(&x);
                    return Ok(self.finish(
                        problem,
                        zu,
                        Duals::default(),
                        QpStatus::Infeasible,
                        f64::INFINITY,
                        iter,
                        false,
                        rho_base,
                    ));
                }
            }

            if adapt {
                // Balance the residuals measured in the scaled space.
                let sp = (0..m).map(|r| (ax[r] - z[r]).abs()).fold(0.0, f64::max);
                let sp_scale = inf_norm(&ax).max(inf_norm(&z)).max(1e-30);
                let sd = (0..n)
                    .map(|j| (px[j] + sc.q[j] + aty[j]).abs())
                    .fold(0.0, f64::max);
                let sd_scale = inf_norm(&px)
                    .max(inf_norm(&aty))
                    .max(inf_norm(&sc.q))
                    .max(1e-30);
                let ratio = if sp > 0.0 && sd > 0.0 {
                    (sp / sp_scale) / (sd / sd_scale)
                } else {
                    1.0
                };
                let new_base = (rho_base * ratio.sqrt()).clamp(1e-6, 1e6);
                if new_base > 5.0 * rho_base || new_base < 0.2 * rho_base {
                    rho_base = new_base;
                    rho = rho_vec(rho_base);
                    let entries = sc.kkt_entries(&rho, self.sigma);
                    if let Ok(f) = LdlFactor::factor(&sym, &entries) {
                        kkt = f;
                    }
                }
            }
        }

        let (last, _) = certify(problem, &sc, &x, &y);
        Ok(self.finish(
            problem,
            last.z,
            last.duals,
            QpStatus::MaxIter,
            last.kkt,
            self.max_iter,
            false,
            rho_base,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        problem: &QpProblem,
        z: Vec<f64>,
        duals: Duals,
        status: QpStatus,
        kkt_residual: f64,
        iterations: usize,
        polished: bool,
        rho: f64,
    ) -> QpSolution {
        let objective = problem.objective(&z);
        QpSolution {
            z,
            duals,
            status,
            kkt_residual,
            iterations,
            objective,
            polished,
            rho,
        }
    }

    fn primal_infeasible(&self, sc: &Scaled, y: &[f64], y_prev: &[f64]) -> bool {
        let m = sc.m();
        let dy: Vec<f64> = (0..m).map(|r| (y[r] - y_prev[r]) * sc.e[r]).collect();
        let norm = inf_norm(&dy);
        if norm < 1e-12 {
            return false;
        }
        let tol = self.eps_infeasible * norm;
        // Cᵀ δy with the unscaled rows: C = E⁻¹ Ā D⁻¹.
        let dy_scaled: Vec<f64> = (0..m).map(|r| dy[r] / sc.e[r]).collect();
        let at = sc.a.mul_t_vec(&dy_scaled);
        let at_norm = (0..sc.n)
            .map(|j| (at[j] / sc.d[j]).abs())
            .fold(0.0, f64::max);
        if at_norm > tol {
            return false;
        }
        let mut support = 0.0;
        for r in 0..m {
            let (lo, hi) = (sc.l[r] / sc.e[r], sc.u[r] / sc.e[r]);
            let v = dy[r];
            if v > tol {
                if !hi.is_finite() {
                    return false;
                }
                support += hi * v;
            } else if v < -tol {
                if !lo.is_finite() {
                    return false;
                }
                support += lo * v;
            }
        }
        support < -tol
    }

    /// Polishes from an active-set guess and certifies the result. A failed
    /// guess is corrected a few times by dropping rows whose multiplier has
    /// the wrong sign and adding rows the polished point violates.
    fn polish(
        &self,
        problem: &QpProblem,
        sc: &Scaled,
        mut active: Vec<(usize, f64)>,
    ) -> Option<Certified> {
        for _ in 0..POLISH_CORRECTIONS {
            let (xp, yp) = self.polish_once(sc, &active)?;
            let (pol, ok) = certify(problem, sc, &xp, &yp);
            if ok {
                return Some(pol);
            }
            let ax = sc.a.mul_vec(&xp);
            let mut next: Vec<(usize, f64)> = active
                .iter()
                .copied()
                .filter(|&(r, bound)| {
                    sc.is_eq(r)
                        || (bound == sc.u[r] && yp[r] >= 0.0)
                        || (bound == sc.l[r] && yp[r] <= 0.0)
                })
                .collect();
            for r in 0..sc.m() {
                if next.iter().any(|a| a.0 == r) {
                    continue;
                }
                let tol = 1e-9 * (1.0 + ax[r].abs());
                if ax[r] > sc.u[r] + tol {
                    next.push((r, sc.u[r]));
                } else if ax[r] < sc.l[r] - tol {
                    next.push((r, sc.l[r]));
                }
            }
            next.sort_by_key(|a| a.0);
            if next == active {
                return None;
            }
            active = next;
        }
        None
    }

    /// Solves the equality-constrained problem on the guessed active set, with
    /// δ-regularization removed by iterative refinement.
    fn polish_once(
        &self,
        sc: &Scaled,
        active_rows: &[(usize, f64)],
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = sc.n;
        let m = sc.m();
        let active: Vec<usize> = active_rows.iter().map(|a| a.0).collect();
        let target: Vec<f64> = active_rows.iter().map(|a| a.1).collect();
        let na = active.len();
        let a_act = sc.a.select_rows(&active);
        let delta = self.polish_delta;

        let mut exact: Vec<(usize, usize, f64)> =
            sc.p.triplets()
                .into_iter()
                .filter(|&(r, c, _)| r >= c)
                .collect();
        exact.extend(a_act.triplets().into_iter().map(|(r, c, v)| (n + r, c, v)));
        let mut reg = exact.clone();
        reg.extend((0..n).map(|i| (i, i, delta)));
        reg.extend((0..na).map(|i| (n + i, n + i, -delta)));

        let sym = LdlSymbolic::analyze(n + na, &reg);
        let fac = LdlFactor::factor(&sym, &reg).ok()?;

        let mut rhs = vec![0.0; n + na];
        for j in 0..n {
            rhs[j] = -sc.q[j];
        }
        rhs[n..].copy_from_slice(&target);

        let mul_exact = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n + na];
            for &(r, c, val) in &exact {
                out[r] += val * v[c];
                if r != c {
                    out[c] += val * v[r];
                }
            }
            out
        };
        let mut sol = rhs.clone();
        fac.solve(&mut sol);
        for _ in 0..self.polish_refine_iters {
            let ks = mul_exact(&sol);
            let mut res: Vec<f64> = (0..n + na).map(|i| rhs[i] - ks[i]).collect();
            if inf_norm(&res) < 1e-14 {
                break;
            }
            fac.solve(&mut res);
            for i in 0..n + na {
                sol[i] += res[i];
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let xp = sol[..n].to_vec();
        let mut yp = vec![0.0; m];
        for (k, &r) in active.iter().enumerate() {
            yp[r] = sol[n + k];
        }
        Some((xp, yp))
    }
}
