//! Sparse convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ zᵀ H z + gᵀ z
//! subject to  A_eq z = b_eq,  A_in z ≤ b_in,  lb ≤ z ≤ ub
//! ```
//!
//! and are solved by an ADMM operator-splitting method on the stacked form
//! `l ≤ C z ≤ u`, followed by an active-set polish step. A solution is only
//! labelled [`QpStatus::Optimal`] once its KKT conditions are certified on the
//! original (unscaled) problem.

mod admm;
mod ldl;
mod sparse;

use std::path::Path;

use thiserror::Error;

pub use admm::QpSettings;
pub use sparse::SparseMatrix;

/// KKT residual bound required for [`QpStatus::Optimal`].
pub const KKT_TOLERANCE: f64 = 1e-6;
/// Scaled primal-feasibility bound required for [`QpStatus::Optimal`].
pub const FEASIBILITY_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cost matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("cost matrix is not positive semidefinite")]
    NotPsd,
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Symmetric PSD cost matrix, both triangles stored.
    pub h: SparseMatrix,
    pub g: Vec<f64>,
    pub a_eq: SparseMatrix,
    pub b_eq: Vec<f64>,
    pub a_in: SparseMatrix,
    pub b_in: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Lagrange multipliers. Stationarity reads
/// `H z + g + A_eqᵀ eq + A_inᵀ ineq + upper − lower = 0` with
/// `ineq, lower, upper ≥ 0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Duals {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub duals: Duals,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub objective: f64,
    pub polished: bool,
    /// Final ADMM step size; useful to seed the next solve of a similar problem.
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub feasible: bool,
    pub worst_violation: f64,
}

impl QpProblem {
    /// An unconstrained problem of dimension `n` with zero cost.
    pub fn new(n: usize) -> Self {
        Self {
            h: SparseMatrix::zeros(n, n),
            g: vec![0.0; n],
            a_eq: SparseMatrix::zeros(0, n),
            b_eq: Vec::new(),
            a_in: SparseMatrix::zeros(0, n),
            b_in: Vec::new(),
            lb: vec![f64::NEG_INFINITY; n],
            ub: vec![f64::INFINITY; n],
        }
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn check_dimensions(&self) -> Result<(), QpError> {
        let n = self.n();
        let mismatch = |what: &str| Err(QpError::DimensionMismatch(what.to_string()));
        if self.h.nrows() != n || self.h.ncols() != n {
            return mismatch("H must be n x n");
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return mismatch("A_eq / b_eq");
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return mismatch("A_in / b_in");
        }
        if self.lb.len() != n || self.ub.len() != n {
            return mismatch("bounds");
        }
        Ok(())
    }

    /// Checks dimensions, symmetry (1e-12) and positive semidefiniteness
    /// (smallest eigenvalue above −1e-9 relative to ‖H‖).
    pub fn check(&self) -> Result<(), QpError> {
        self.check_dimensions()?;
        let asym = self.h.asymmetry();
        if asym > 1e-12 {
            return Err(QpError::NotSymmetric(asym));
        }
        let n = self.n();
        if n == 0 {
            return Ok(());
        }
        let scale = self
            .h
            .triplets()
            .iter()
            .fold(1.0_f64, |m, t| m.max(t.2.abs()));
        let tau = 1e-9 * scale;
        let mut entries: Vec<(usize, usize, f64)> = self
            .h
            .triplets()
            .into_iter()
            .filter(|&(r, c, _)| r >= c)
            .collect();
        entries.extend((0..n).map(|i| (i, i, tau)));
        let sym = ldl::LdlSymbolic::analyze(n, &entries);
        match ldl::LdlFactor::factor(&sym, &entries) {
            Ok(f) if f.negative_pivots() == 0 => Ok(()),
            _ => Err(QpError::NotPsd),
        }
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let hz = self.h.mul_vec(z);
        z.iter().zip(&hz).map(|(a, b)| 0.5 * a * b).sum::<f64>()
            + z.iter().zip(&self.g).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Writes `H`, `A_eq`, `A_in` in Matrix Market format and the vectors as
    /// one value per line into `dir`, for offline debugging.
    pub fn dump(&self, dir: &Path) -> Result<(), QpError> {
        let io = |e: std::io::Error| QpError::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        let vec_text = |v: &[f64]| v.iter().map(|x| format!("{x:e}\n")).collect::<String>();
        let files = [
            ("H.mtx", self.h.to_matrix_market()),
            ("A_eq.mtx", self.a_eq.to_matrix_market()),
            ("A_in.mtx", self.a_in.to_matrix_market()),
            ("g.txt", vec_text(&self.g)),
            ("b_eq.txt", vec_text(&self.b_eq)),
            ("b_in.txt", vec_text(&self.b_in)),
            ("lb.txt", vec_text(&self.lb)),
            ("ub.txt", vec_text(&self.ub)),
        ];
        for (name, text) in files {
            std::fs::write(dir.join(name), text).map_err(io)?;
        }
        Ok(())
    }
}

/// Solves with default settings.
pub fn solve(problem: &QpProblem, warm_start: Option<&[f64]>) -> Result<QpSolution, QpError> {
    QpSettings::default().solve(problem, warm_start, None)
}

/// Largest constraint violation of `z`, each row scaled by `max(‖row‖∞, 1)`
/// (bounds by 1). Non-positive means feasible; `feasible` uses the
/// [`FEASIBILITY_TOLERANCE`].
pub fn validate(problem: &QpProblem, z: &[f64]) -> Validation {
    let worst = violation(problem, z);
    Validation {
        feasible: worst <= FEASIBILITY_TOLERANCE,
        worst_violation: worst,
    }
}

fn violation(problem: &QpProblem, z: &[f64]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    let eq = problem.a_eq.mul_vec(z);
    for (r, (a, b)) in eq.iter().zip(&problem.b_eq).enumerate() {
        worst = worst.max((a - b).abs() / problem.a_eq.row_inf_norm(r).max(1.0));
    }
    let ineq = problem.a_in.mul_vec(z);
    for (r, (a, b)) in ineq.iter().zip(&problem.b_in).enumerate() {
        worst = worst.max((a - b) / problem.a_in.row_inf_norm(r).max(1.0));
    }
    for i in 0..z.len() {
        worst = worst.max(problem.lb[i] - z[i]).max(z[i] - problem.ub[i]);
    }
    if worst == f64::NEG_INFINITY {
        0.0
    } else {
        worst
    }
}

/// KKT residual of a primal-dual pair on the original problem: the largest of
/// relative stationarity, scaled primal violation, and complementarity
/// (which also measures wrong-signed multipliers).
pub fn kkt_residual(problem: &QpProblem, z: &[f64], duals: &Duals) -> f64 {
    let hz = problem.h.mul_vec(z);
    let aeq_t = problem.a_eq.mul_t_vec(&duals.eq);
    let ain_t = problem.a_in.mul_t_vec(&duals.ineq);
    let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut bound_t = vec![0.0; z.len()];
    for i in 0..z.len() {
        bound_t[i] = duals.upper[i] - duals.lower[i];
    }
    let mut cy = aeq_t.clone();
    for i in 0..z.len() {
        cy[i] += ain_t[i] + bound_t[i];
    }
    let stat_scale = 1.0_f64.max(inf(&hz)).max(inf(&problem.g)).max(inf(&cy));
    let stat = (0..z.len())
        .map(|i| (hz[i] + problem.g[i] + cy[i]).abs())
        .fold(0.0_f64, f64::max)
        / stat_scale;

    let primal = violation(problem, z).max(0.0);

    // min(multiplier, slack) per one-sided row; a multiplier on an infinite
    // bound counts fully.
    let comp_one = |mult: f64, slack: f64| -> f64 {
        let m = mult.max(0.0) / stat_scale;
        let neg = (-mult).max(0.0) / stat_scale;
        neg.max(if slack.is_finite() {
            m.min(slack.max(0.0))
        } else {
            m
        })
    };
    let mut comp = 0.0_f64;
    let ineq = problem.a_in.mul_vec(z);
    for r in 0..ineq.len() {
        let slack = (problem.b_in[r] - ineq[r]) / problem.a_in.row_inf_norm(r).max(1.0);
        comp = comp.max(comp_one(duals.ineq[r], slack));
    }
    for i in 0..z.len() {
        comp = comp.max(comp_one(duals.lower[i], z[i] - problem.lb[i]));
        comp = comp.max(comp_one(duals.upper[i], problem.ub[i] - z[i]));
    }
    stat.max(primal).max(comp)
}
