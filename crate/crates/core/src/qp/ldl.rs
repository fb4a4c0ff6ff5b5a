//! Envelope (skyline) LDLᵀ factorization of sparse symmetric matrices with
//! reverse Cuthill–McKee ordering.
//!
//! No pivoting is performed, so the matrix must be strongly factorizable;
//! quasi-definite KKT matrices `[P + σI, Aᵀ; A, −R]` are, under any symmetric
//! permutation.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ZeroPivot(pub usize);

/// Ordering and envelope structure, reusable across numeric factorizations
/// of matrices with the same sparsity pattern.
#[derive(Debug, Clone)]
pub(crate) struct LdlSymbolic {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    iperm: Vec<usize>,
    /// First stored column of each permuted row.
    first: Vec<usize>,
    /// Offset of each row's strictly-lower envelope in `LdlFactor::l`.
    start: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct LdlFactor {
    sym: LdlSymbolic,
    l: Vec<f64>,
    d: Vec<f64>,
}

fn adjacency(n: usize, entries: &[(usize, usize, f64)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j, _) in entries {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

fn bfs_levels(
    adj: &[Vec<usize>],
    root: usize,
    mark: &mut [usize],
    stamp: usize,
) -> (usize, Vec<usize>) {
    // Returns eccentricity and the last level.
    let mut level = vec![root];
    mark[root] = stamp;
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &u in &level {
            for &w in &adj[u] {
                if mark[w] != stamp {
                    mark[w] = stamp;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (depth, level);
        }
        depth += 1;
        level = next;
    }
}

/// Reverse Cuthill–McKee ordering, one pseudo-peripheral start per component.
/// Dense nodes are taken out of the graph and placed last, where they only
/// cost one full row each in the skyline.
pub(crate) fn rcm_order(n: usize, entries: &[(usize, usize, f64)]) -> Vec<usize> {
    let mut adj = adjacency(n, entries);
    let dense_limit = 16.max((2.0 * (n as f64).sqrt()) as usize);
    let is_dense: Vec<bool> = adj.iter().map(|a| a.len() > dense_limit).collect();
    let mut dense: Vec<usize> = (0..n).filter(|&i| is_dense[i]).collect();
    dense.sort_by_key(|&i| (adj[i].len(), i));
    for (i, a) in adj.iter_mut().enumerate() {
        if is_dense[i] {
            a.clear();
        } else {
            a.retain(|&w| !is_dense[w]);
        }
    }
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = is_dense.clone();
    let mut mark = vec![usize::MAX; n];
    let mut stamp = 0;
    let mut order = Vec::with_capacity(n);

    let mut seeds: Vec<usize> = (0..n).collect();
    seeds.sort_by_key(|&i| (deg[i], i));
    for &seed in &seeds {
        if visited[seed] {
            continue;
        }
        // George–Liu pseudo-peripheral node search.
        let mut root = seed;
        stamp += 1;
        let (mut ecc, mut last) = bfs_levels(&adj, root, &mut mark, stamp);
        for _ in 0..8 {
            let cand = *last.iter().min_by_key(|&&i| (deg[i], i)).unwrap();
            stamp += 1;
            let (e, l) = bfs_levels(&adj, cand, &mut mark, stamp);
            if e > ecc {
                root = cand;
                ecc = e;
                last = l;
            } else {
                break;
            }
        }

        let begin = order.len();
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nb: Vec<usize> = adj[u].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| (deg[w], w));
            for w in nb {
                visited[w] = true;
                queue.push_back(w);
            }
        }
        order[begin..].reverse();
    }
    order.extend(dense);
    order
}

impl LdlSymbolic {
    /// Analyzes the pattern of a symmetric matrix given by the entries of
    /// one triangle (either orientation; diagonal included).
    pub fn analyze(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let perm = rcm_order(n, entries);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(i, j, _) in entries {
            let (pi, pj) = (iperm[i], iperm[j]);
            let (r, c) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            first[r] = first[r].min(c);
        }
        let mut start = vec![0; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i]);
        }
        Self {
            n,
            perm,
            iperm,
            first,
            start,
        }
    }

    pub fn envelope_size(&self) -> usize {
        self.start[self.n]
    }
}

impl LdlFactor {
    pub fn factor(sym: &LdlSymbolic, entries: &[(usize, usize, f64)]) -> Result<Self, ZeroPivot> {
        let n = sym.n;
        let mut l = vec![0.0; sym.envelope_size()];
        let mut d = vec![0.0; n];
        for &(i, j, v) in entries {
            let (pi, pj) = (sym.iperm[i], sym.iperm[j]);
            let (r, c) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            if r == c {
                d[r] += v;
            } else {
                debug_assert!(c >= sym.first[r]);
                l[sym.start[r] + c - sym.first[r]] += v;
            }
        }
        // Row-oriented Crout: on entry l holds A; row i is overwritten with
        // w_ij = L_ij D_j, then divided by D_j once D_i is formed.
        for i in 0..n {
            let fi = sym.first[i];
            let si = sym.start[i];
            for j in fi..i {
                let fj = sym.first[j];
                let sj = sym.start[j];
                let lo = fi.max(fj);
                let mut s = l[si + j - fi];
                for k in lo..j {
                    s -= l[si + k - fi] * l[sj + k - fj];
                }
                l[si + j - fi] = s;
            }
            // Now row i holds w_ik; convert to L_ik and accumulate D_i.
            let mut di = d[i];
            for k in fi..i {
                let w = l[si + k - fi];
                let lik = w / d[k];
                di -= w * lik;
                l[si + k - fi] = lik;
            }
            if !(di.abs() > 1e-300) || !di.is_finite() {
                return Err(ZeroPivot(sym.perm[i]));
            }
            d[i] = di;
        }
        Ok(Self {
            sym: sym.clone(),
            l,
            d,
        })
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let sym = &self.sym;
        let n = sym.n;
        let mut y: Vec<f64> = sym.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let (fi, si) = (sym.first[i], sym.start[i]);
            let mut s = y[i];
            for k in fi..i {
                s -= self.l[si + k - fi] * y[k];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let (fi, si) = (sym.first[i], sym.start[i]);
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.l[si + k - fi] * yi;
            }
        }
        for (new, &old) in sym.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }

    /// Number of negative pivots (inertia check for quasi-definite systems).
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym_mul(n: usize, entries: &[(usize, usize, f64)], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; n];
        for &(i, j, v) in entries {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    #[test]
    fn solves_quasi_definite_system() {
        // [P + σI, Aᵀ; A, −1/ρ] with P = [[4,1],[1,2]], A = [[1,1],[1,0],[0,1]].
        let entries = vec![
            (0, 0, 4.0),
            (1, 0, 1.0),
            (1, 1, 2.0),
            (2, 0, 1.0),
            (2, 1, 1.0),
            (3, 0, 1.0),
            (4, 1, 1.0),
            (2, 2, -0.1),
            (3, 3, -10.0),
            (4, 4, -10.0),
        ];
        let sym = LdlSymbolic::analyze(5, &entries);
        let f = LdlFactor::factor(&sym, &entries).unwrap();
        assert_eq!(f.negative_pivots(), 3);
        let x_true = [1.0, -2.0, 0.5, 3.0, -1.5];
        let mut b = sym_mul(5, &entries, &x_true);
        f.solve(&mut b);
        for (a, e) in b.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn tridiagonal_chain_gets_small_envelope() {
        // A path graph given in scrambled numbering.
        let n = 50;
        let label = |i: usize| (i * 17) % n;
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((label(i), label(i), 4.0));
            if i + 1 < n {
                entries.push((label(i + 1), label(i), -1.0));
            }
        }
        let sym = LdlSymbolic::analyze(n, &entries);
        assert!(sym.envelope_size() <= n);
        let f = LdlFactor::factor(&sym, &entries).unwrap();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut b = sym_mul(n, &entries, &x_true);
        f.solve(&mut b);
        for (a, e) in b.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn random_quasi_definite_systems() {
        // Deterministic pseudo-random pattern without extra dependencies.
        let mut state = 12345u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        for _ in 0..20 {
            let (n, m) = (15, 12);
            let mut entries = Vec::new();
            for i in 0..n {
                entries.push((i, i, 1.0 + next()));
                for j in 0..i {
                    if next() < 0.2 {
                        let v = next() - 0.5;
                        entries.push((i, j, 0.1 * v));
                        entries.push((i, i, 0.1));
                        entries.push((j, j, 0.1));
                    }
                }
            }
            for r in 0..m {
                for c in 0..n {
                    if next() < 0.3 {
                        entries.push((n + r, c, next() - 0.5));
                    }
                }
                entries.push((n + r, n + r, -0.01 - next()));
            }
            let size = n + m;
            let sym = LdlSymbolic::analyze(size, &entries);
            let f = LdlFactor::factor(&sym, &entries).unwrap();
            let x_true: Vec<f64> = (0..size).map(|_| next() - 0.5).collect();
            let mut b = sym_mul(size, &entries, &x_true);
            f.solve(&mut b);
            for (a, e) in b.iter().zip(&x_true) {
                assert!((a - e).abs() < 1e-9, "{a} vs {e}");
            }
        }
    }
}
