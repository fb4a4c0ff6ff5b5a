//! Tensor-product cubic spline on a rectangular grid.
//!
//! The surface is stored as bicubic Hermite patches whose node derivatives
//! come from not-a-knot cubic splines along each axis. With spline-consistent
//! node derivatives the patches reproduce the tensor-product spline exactly,
//! so values, first and second derivatives are continuous across cells.

/// Node slopes of the not-a-knot cubic spline through `(x, y)`.
///
/// `x` must be strictly increasing with at least 4 points.
pub(crate) fn not_a_knot_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    debug_assert!(n >= 4 && y.len() == n);
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let s: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();

    // Tridiagonal system: sub[i]·m[i-1] + diag[i]·m[i] + sup[i]·m[i+1] = rhs[i].
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];

    let d0 = h[0] + h[1];
    diag[0] = h[1];
    sup[0] = d0;
    rhs[0] = ((h[0] + 2.0 * d0) * h[1] * s[0] + h[0] * h[0] * s[1]) / d0;

    for i in 1..n - 1 {
        sub[i] = h[i];
        diag[i] = 2.0 * (h[i - 1] + h[i]);
        sup[i] = h[i - 1];
        rhs[i] = 3.0 * (h[i] * s[i - 1] + h[i - 1] * s[i]);
    }

    let hl = h[n - 2];
    let hp = h[n - 3];
    let dn = hl + hp;
    sub[n - 1] = dn;
    diag[n - 1] = hp;
    rhs[n - 1] = (hl * hl * s[n - 3] + (2.0 * dn + hl) * hp * s[n - 2]) / dn;

    solve_tridiagonal(&sub, &diag, &sup, &rhs)
}

/// Tridiagonal solve with partial pivoting.
///
/// The not-a-knot end rows are not diagonally dominant, so plain Thomas
/// elimination is not safe; this is Gaussian elimination on the band with
/// row swaps (one extra super-diagonal of fill).
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    // Row i holds columns i, i+1, i+2 after pivoting.
    let mut a = vec![[0.0_f64; 3]; n];
    let mut l = vec![0.0_f64; n]; // sub-diagonal entries still to eliminate
    let mut b = rhs.to_vec();
    for i in 0..n {
        a[i][0] = diag[i];
        a[i][1] = if i + 1 < n { sup[i] } else { 0.0 };
        l[i] = sub[i];
    }
    for i in 0..n - 1 {
        // Candidate pivots: a[i][0] (row i) and l[i+1] (row i+1, column i).
        if l[i + 1].abs() > a[i][0].abs() {
            let row_i = a[i];
            let row_n = [l[i + 1], a[i + 1][0], a[i + 1][1]];
            a[i] = row_n;
            l[i + 1] = row_i[0];
            a[i + 1] = [row_i[1], row_i[2], 0.0];
            b.swap(i, i + 1);
        }
        let f = l[i + 1] / a[i][0];
        if f != 0.0 {
            a[i + 1][0] -= f * a[i][1];
            a[i + 1][1] -= f * a[i][2];
            b[i + 1] -= f * b[i];
        }
        l[i + 1] = 0.0;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        if i + 1 < n {
            acc -= a[i][1] * x[i + 1];
        }
        if i + 2 < n {
            acc -= a[i][2] * x[i + 2];
        }
        x[i] = acc / a[i][0];
    }
    x
}

/// Value and derivatives up to second order at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SurfacePoint {
    pub f: f64,
    pub fx: f64,
    pub fy: f64,
    pub fxx: f64,
    pub fxy: f64,
    pub fyy: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct SplineSurface {
    x: Vec<f64>,
    y: Vec<f64>,
    // Row-major, index [i * ny + j] for (x[i], y[j]).
    f: Vec<f64>,
    fx: Vec<f64>,
    fy: Vec<f64>,
    fxy: Vec<f64>,
}

impl SplineSurface {
    /// Builds the spline from node values `values[i * y.len() + j]`.
    pub fn new(x: Vec<f64>, y: Vec<f64>, values: Vec<f64>) -> Self {
        let (nx, ny) = (x.len(), y.len());
        debug_assert_eq!(values.len(), nx * ny);

        let mut fy = vec![0.0; nx * ny];
        for i in 0..nx {
            let row = &values[i * ny..(i + 1) * ny];
            let m = not_a_knot_slopes(&y, row);
            fy[i * ny..(i + 1) * ny].copy_from_slice(&m);
        }

        let mut fx = vec![0.0; nx * ny];
        let mut fxy = vec![0.0; nx * ny];
        let mut col = vec![0.0; nx];
        for j in 0..ny {
            for i in 0..nx {
                col[i] = values[i * ny + j];
            }
            let m = not_a_knot_slopes(&x, &col);
            for i in 0..nx {
                fx[i * ny + j] = m[i];
            }
        }
        for i in 0..nx {
            let row = &fx[i * ny..(i + 1) * ny];
            let m = not_a_knot_slopes(&y, row);
            fxy[i * ny..(i + 1) * ny].copy_from_slice(&m);
        }

        Self {
            x,
            y,
            f: values,
            fx,
            fy,
            fxy,
        }
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x
    }

    pub fn y_grid(&self) -> &[f64] {
        &self.y
    }

    pub fn node_values(&self) -> &[f64] {
        &self.f
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, x1) = (self.x[0], *self.x.last().unwrap());
        let (y0, y1) = (self.y[0], *self.y.last().unwrap());
        x.is_finite() && y.is_finite() && x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    fn cell(grid: &[f64], v: f64) -> usize {
        // Last cell is closed on the right.
        match grid.partition_point(|&g| g <= v) {
            0 => 0,
            p if p >= grid.len() => grid.len() - 2,
            p => p - 1,
        }
    }

    /// Evaluates the surface; the caller checks the domain first.
    pub fn eval(&self, x: f64, y: f64) -> SurfacePoint {
        let ny = self.y.len();
        let i = Self::cell(&self.x, x);
        let j = Self::cell(&self.y, y);
        let hx = self.x[i + 1] - self.x[i];
        let hy = self.y[j + 1] - self.y[j];
        let t = (x - self.x[i]) / hx;
        let u = (y - self.y[j]) / hy;

        let (a, da, dda) = hermite(t);
        let (b, db, ddb) = hermite(u);

        let mut out = SurfacePoint {
            f: 0.0,
            fx: 0.0,
            fy: 0.0,
            fxx: 0.0,
            fxy: 0.0,
            fyy: 0.0,
        };
        for p in 0..2 {
            for q in 0..2 {
                let k = (i + p) * ny + (j + q);
                // Corner data in local (t, u) coordinates.
                let c = [
                    self.f[k],
                    hx * self.fx[k],
                    hy * self.fy[k],
                    hx * hy * self.fxy[k],
                ];
                // Basis index: value basis at 2p, slope basis at 2p + 1.
                let (vp, sp) = (2 * p, 2 * p + 1);
                let (vq, sq) = (2 * q, 2 * q + 1);
                let terms = [
                    (vp, vq, c[0]),
                    (sp, vq, c[1]),
                    (vp, sq, c[2]),
                    (sp, sq, c[3]),
                ];
                for (bt, bu, coef) in terms {
                    out.f += coef * a[bt] * b[bu];
                    out.fx += coef * da[bt] * b[bu];
                    out.fy += coef * a[bt] * db[bu];
                    out.fxx += coef * dda[bt] * b[bu];
                    out.fxy += coef * da[bt] * db[bu];
                    out.fyy += coef * a[bt] * ddb[bu];
                }
            }
        }
        out.fx /= hx;
        out.fy /= hy;
        out.fxx /= hx * hx;
        out.fxy /= hx * hy;
        out.fyy /= hy * hy;
        out
    }
}

/// Cubic Hermite basis `[h00, h10, h01, h11]` and its first two derivatives.
fn hermite(t: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        [
            2.0 * t3 - 3.0 * t2 + 1.0,
            t3 - 2.0 * t2 + t,
            -2.0 * t3 + 3.0 * t2,
            t3 - t2,
        ],
        [
            6.0 * t2 - 6.0 * t,
            3.0 * t2 - 4.0 * t + 1.0,
            -6.0 * t2 + 6.0 * t,
            3.0 * t2 - 2.0 * t,
        ],
        [
            12.0 * t - 6.0,
            6.0 * t - 4.0,
            -12.0 * t + 6.0,
            6.0 * t - 2.0,
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn not_a_knot_reproduces_cubics() {
        let x = [0.0, 0.3, 1.0, 1.5, 2.7, 3.0];
        let f = |x: f64| 2.0 * x * x * x - x * x + 0.5 * x - 1.0;
        let df = |x: f64| 6.0 * x * x - 2.0 * x + 0.5;
        let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let m = not_a_knot_slopes(&x, &y);
        for (xi, mi) in x.iter().zip(&m) {
            assert!((df(*xi) - mi).abs() < 1e-10, "{xi}: {mi} vs {}", df(*xi));
        }
    }

    #[test]
    fn surface_reproduces_bicubic_polynomial() {
        let g = |x: f64, y: f64| x * x * x * y - 2.0 * x * y * y * y + x * y + 3.0;
        let xs: Vec<f64> = (0..7).map(|i| i as f64 * 0.5).collect();
        let ys: Vec<f64> = (0..5).map(|j| 1.0 + j as f64 * 0.25).collect();
        let vals: Vec<f64> = xs
            .iter()
            .flat_map(|&x| ys.iter().map(move |&y| g(x, y)))
            .collect();
        let s = SplineSurface::new(xs, ys, vals);
        let p = s.eval(1.23, 1.61);
        let (x, y) = (1.23_f64, 1.61_f64);
        assert!((p.f - g(x, y)).abs() < 1e-10);
        assert!((p.fx - (3.0 * x * x * y - 2.0 * y * y * y + y)).abs() < 1e-9);
        assert!((p.fy - (x * x * x - 6.0 * x * y * y + x)).abs() < 1e-9);
        assert!((p.fxx - 6.0 * x * y).abs() < 1e-8);
        assert!((p.fxy - (3.0 * x * x - 6.0 * y * y + 1.0)).abs() < 1e-8);
        assert!((p.fyy - (-12.0 * x * y)).abs() < 1e-8);
    }

    #[test]
    fn nodes_are_reproduced() {
        let xs: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let ys: Vec<f64> = (0..4).map(|j| j as f64 * 0.1).collect();
        let vals: Vec<f64> = (0..20).map(|k| ((k * 7) % 11) as f64).collect();
        let s = SplineSurface::new(xs.clone(), ys.clone(), vals.clone());
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in ys.iter().enumerate() {
                assert_eq!(s.eval(x, y).f, vals[i * 4 + j]);
            }
        }
    }
}
