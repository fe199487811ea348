//! Compressed sparse row matrices and an envelope Cholesky factorization.
//!
//! The factorization reorders the matrix with reverse Cuthill-McKee and then
//! factors inside the row envelope, which is closed under fill. Mesh operators
//! have small envelopes after reordering, so this is both exact and fast enough
//! for the mesh sizes the pipeline targets.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Sparse matrix in compressed-row form with sorted, unique column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// in input order, so assembly is deterministic.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&t| (triplets[t].0, triplets[t].1, t));

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &t in &order {
            let (r, c, v) = triplets[t];
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indptr[r + 1] += 1;
                indices.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let trip: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &trip)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let trip: Vec<_> = diag.iter().enumerate().map(|(i, &d)| (i, i, d)).collect();
        Self::from_triplets(diag.len(), diag.len(), &trip)
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

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            out.extend(cols.iter().zip(vals).map(|(&c, &v)| (r, c, v)));
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect()
    }

    /// Sparse times dense: `self * x` with `x` of shape `ncols × k`.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols);
        let k = x.ncols();
        let mut out = DMatrix::zeros(self.nrows, k);
        for j in 0..k {
            let col = x.column(j);
            for r in 0..self.nrows {
                let (cols, vals) = self.row(r);
                let mut s = 0.0;
                for (&c, &v) in cols.iter().zip(vals) {
                    s += v * col[c];
                }
                out[(r, j)] = s;
            }
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let trip: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(r, c, v)| (c, r, v))
            .collect();
        Self::from_triplets(self.ncols, self.nrows, &trip)
    }

    pub fn scale(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &CsrMatrix, s: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut trip = self.triplets();
        trip.extend(other.triplets().into_iter().map(|(r, c, v)| (r, c, s * v)));
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut trip = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut touched = Vec::new();
        let mut mark = vec![false; other.ncols];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(k);
                for (&c, &b) in ocols.iter().zip(ovals) {
                    if !mark[c] {
                        mark[c] = true;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                trip.push((r, c, acc[c]));
                acc[c] = 0.0;
                mark[c] = false;
            }
            touched.clear();
        }
        Self::from_triplets(self.nrows, other.ncols, &trip)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            d[(r, c)] = v;
        }
        d
    }

    /// True when the sparsity pattern and values are symmetric within `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols
            && self
                .triplets()
                .iter()
                .all(|&(r, c, v)| (self.get(c, r) - v).abs() <= tol)
    }

    /// Adjacency lists of the off-diagonal pattern (assumes a symmetric pattern).
    fn adjacency(&self) -> Vec<Vec<usize>> {
        (0..self.nrows)
            .map(|r| self.row(r).0.iter().copied().filter(|&c| c != r).collect())
            .collect()
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric pattern. Returns `perm` with
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, visited: &[bool]| -> (usize, usize) {
        // (eccentricity, last vertex of the deepest level with min degree)
        let mut dist = vec![usize::MAX; n];
        let mut q = VecDeque::new();
        dist[start] = 0;
        q.push_back(start);
        let mut far = start;
        while let Some(u) = q.pop_front() {
            if dist[u] > dist[far] || (dist[u] == dist[far] && degree[u] < degree[far]) {
                far = u;
            }
            for &v in &adj[u] {
                if !visited[v] && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        (dist[far], far)
    };

    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start vertex
        let mut start = seed;
        let (mut ecc, mut far) = bfs_levels(start, &visited);
        for _ in 0..8 {
            let (e2, f2) = bfs_levels(far, &visited);
            if e2 <= ecc {
                break;
            }
            start = far;
            ecc = e2;
            far = f2;
        }
        let mut q = VecDeque::new();
        visited[start] = true;
        q.push_back(start);
        while let Some(u) = q.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                if !visited[v] {
                    visited[v] = true;
                    q.push_back(v);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor `P A Pᵀ = L Lᵀ` stored row-wise inside the envelope.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    /// first column of row i's envelope (permuted numbering)
    first: Vec<usize>,
    /// offset of row i in `data`
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SparseCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "Cholesky needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let perm = reverse_cuthill_mckee(&a.adjacency());
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for old_r in 0..n {
            let r = inv[old_r];
            for &old_c in a.row(old_r).0 {
                let c = inv[old_c];
                let (hi, lo) = if r >= c { (r, c) } else { (c, r) };
                first[hi] = first[hi].min(lo);
            }
        }
        let mut start = vec![0usize; n + 1];
        for i in 0..n {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; start[n]];
        for old_r in 0..n {
            let r = inv[old_r];
            let (cols, vals) = a.row(old_r);
            for (&old_c, &v) in cols.iter().zip(vals) {
                let c = inv[old_c];
                if c <= r {
                    data[start[r] + (c - first[r])] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let lo = fi.max(fj);
                let mut s = data[start[i] + (j - fi)];
                let ri = &data[start[i] + (lo - fi)..start[i] + (j - fi)];
                let rj = &data[start[j] + (lo - fj)..start[j] + (j - fj)];
                for (x, y) in ri.iter().zip(rj) {
                    s -= x * y;
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite {
                            pivot: perm[i],
                            value: s,
                        });
                    }
                    data[start[i] + (i - fi)] = s.sqrt();
                } else {
                    let d = data[start[j] + (j - fj)];
                    data[start[i] + (j - fi)] = s / d;
                }
            }
        }
        Ok(SparseCholesky {
            n,
            perm,
            first,
            start,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        // L y = Pb
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            let mut s = y[i];
            for (k, &l) in row[..i - fi].iter().enumerate() {
                s -= l * y[fi + k];
            }
            y[i] = s / row[i - fi];
        }
        // Lᵀ x = y, column-oriented sweep over rows of L
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let xi = y[i];
            for (k, &l) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= l * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    pub fn solve_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col: Vec<f64> = b.column(j).iter().copied().collect();
            let x = self.solve(&col);
            out.column_mut(j).copy_from_slice(&x);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 4.0 + rng.random::<f64>()));
            for _ in 0..2 {
                let j = rng.random_range(0..n);
                if j != i {
                    let v = rng.random::<f64>() - 0.5;
                    trip.push((i, j, v));
                    trip.push((j, i, v));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &trip)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn matmul_matches_dense() {
        let a = random_spd(12, 1);
        let b = random_spd(12, 2);
        let p = a.matmul(&b).to_dense();
        let d = a.to_dense() * b.to_dense();
        assert!((p - d).abs().max() < 1e-12);
    }

    #[test]
    fn cholesky_solves_random_spd() {
        let a = random_spd(60, 3);
        let chol = SparseCholesky::factor(&a).unwrap();
        let b: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
        let x = chol.solve(&b);
        let r = a.mul_vec(&x);
        let err: f64 = r.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "residual {err}");
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(
            SparseCholesky::factor(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = random_spd(40, 4);
        let mut p = reverse_cuthill_mckee(&a.adjacency());
        p.sort_unstable();
        assert_eq!(p, (0..40).collect::<Vec<_>>());
    }
}
