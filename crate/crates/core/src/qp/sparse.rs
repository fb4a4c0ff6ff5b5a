//! Compressed sparse row matrices.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` entries. Duplicates are summed and
    /// explicit zeros dropped. Out-of-range indices panic.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        for &(r, c, _) in &sorted {
            assert!(
                r < nrows && c < ncols,
                "entry ({r}, {c}) outside {nrows}x{ncols}"
            );
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut m = Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        };
        m.drop_zeros();
        m
    }

    pub fn from_dense(rows: &[Vec<f64>], ncols: usize) -> Self {
        let mut t = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), ncols);
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(rows.len(), ncols, &t)
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t)
    }

    fn drop_zeros(&mut self) {
        let mut row_ptr = vec![0; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k] != 0.0 {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `r` as `(col, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `y = Aᵀ x`.
    pub fn mul_t_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            let xr = x[r];
            if xr != 0.0 {
                for (c, v) in self.row(r) {
                    y[c] += v * xr;
                }
            }
        }
        y
    }

    pub fn row_inf_norm(&self, r: usize) -> f64 {
        self.row(r).fold(0.0, |m, (_, v)| m.max(v.abs()))
    }

    pub fn col_inf_norms(&self) -> Vec<f64> {
        let mut n = vec![0.0_f64; self.ncols];
        for (c, v) in self.col_idx.iter().zip(&self.values) {
            n[*c] = n[*c].max(v.abs());
        }
        n
    }

    /// `diag(left) · A · diag(right)`, in place.
    pub fn scale(&mut self, left: &[f64], right: &[f64]) {
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                self.values[k] *= left[r] * right[self.col_idx[k]];
            }
        }
    }

    pub fn scale_all(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Largest `|A_ij − A_ji|`; only meaningful for square matrices.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (r, c, v) in self.triplets() {
            worst = worst.max((v - self.get(c, r)).abs());
        }
        worst
    }

    /// Stacks matrices with equal column counts.
    pub fn vstack(blocks: &[&SparseMatrix]) -> Self {
        let ncols = blocks.first().map_or(0, |b| b.ncols);
        let mut t = Vec::new();
        let mut offset = 0;
        for b in blocks {
            assert_eq!(b.ncols, ncols);
            t.extend(b.triplets().into_iter().map(|(r, c, v)| (r + offset, c, v)));
            offset += b.nrows;
        }
        Self::from_triplets(offset, ncols, &t)
    }

    /// Keeps the listed rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut t = Vec::new();
        for (new_r, &r) in rows.iter().enumerate() {
            t.extend(self.row(r).map(|(c, v)| (new_r, c, v)));
        }
        Self::from_triplets(rows.len(), self.ncols, &t)
    }

    /// Matrix Market coordinate format (1-based indices).
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "%%MatrixMarket matrix coordinate real general");
        let _ = writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz());
        for (r, c, v) in self.triplets() {
            let _ = writeln!(s, "{} {} {:e}", r + 1, c + 1, v);
        }
        s
    }
}
