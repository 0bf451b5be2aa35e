//! Compressed-row matrices and the two SPD solvers used by the FEM layer:
//! Jacobi-preconditioned conjugate gradients and an envelope Cholesky
//! factorization under a reverse Cuthill-McKee ordering.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a square matrix from `(row, col, value)` triplets, summing
    /// duplicates. The result does not depend on triplet order beyond the
    /// summation order of duplicates, which follows the input order.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        // bucket by row, stable in input order
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..n {
            let (lo, hi) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(lo..hi);
            order.sort_by_key(|&k| (cols[k], k));
            let mut last: Option<usize> = None;
            for &k in &order {
                if last == Some(cols[k]) {
                    *values.last_mut().unwrap() += vals[k];
                } else {
                    col_idx.push(cols[k]);
                    values.push(vals[k]);
                    last = Some(cols[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut s = 0.0;
            for k in lo..hi {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// Largest `|a_ij - a_ji|` over the stored pattern.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Principal submatrix on the rows/columns where `keep[i]` is true,
    /// renumbered consecutively in increasing original order.
    pub fn principal_submatrix(&self, keep: &[bool]) -> (CsrMatrix, Vec<usize>) {
        let mut map = vec![usize::MAX; self.n];
        let mut kept = Vec::new();
        for (i, &k) in keep.iter().enumerate() {
            if k {
                map[i] = kept.len();
                kept.push(i);
            }
        }
        let mut row_ptr = Vec::with_capacity(kept.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &i in &kept {
            for (j, v) in self.row(i) {
                if map[j] != usize::MAX {
                    col_idx.push(map[j]);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        (
            CsrMatrix {
                n: kept.len(),
                row_ptr,
                col_idx,
                values,
            },
            kept,
        )
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients on an SPD matrix.
///
/// Stops once `|b - Ax| <= tol * |b|`. A non-positive curvature `p^T A p`
/// is reported as [`Error::Indefinite`].
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgReport)> {
    let n = a.dim();
    let b_norm = norm(b);
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgReport {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let ax = a.mul_vec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut res = norm(&r) / b_norm;
    for it in 0..max_iter {
        if res <= tol {
            return Ok((
                x,
                CgReport {
                    iterations: it,
                    relative_residual: res,
                },
            ));
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Indefinite { curvature: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = norm(&r) / b_norm;
    }
    if res <= tol {
        Ok((
            x,
            CgReport {
                iterations: max_iter,
                relative_residual: res,
            },
        ))
    } else {
        Err(Error::NotConverged {
            iterations: max_iter,
            residual: res,
        })
    }
}

/// Reverse Cuthill-McKee permutation of a symmetric sparsity pattern.
/// `perm[k]` is the original index placed at position `k`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    // Breadth-first level structure from `root`; returns (last level, depth).
    let bfs_levels = |root: usize| -> (Vec<usize>, usize) {
        let mut level = vec![usize::MAX; n];
        level[root] = 0;
        let mut queue = VecDeque::from([root]);
        let mut last = vec![root];
        let mut depth = 0;
        while let Some(v) = queue.pop_front() {
            for (w, _) in a.row(v) {
                if level[w] == usize::MAX {
                    level[w] = level[v] + 1;
                    if level[w] > depth {
                        depth = level[w];
                        last.clear();
                    }
                    if level[w] == depth {
                        last.push(w);
                    }
                    queue.push_back(w);
                }
            }
        }
        (last, depth)
    };

    let mut candidates: Vec<usize> = (0..n).collect();
    candidates.sort_by_key(|&i| (degree[i], i));
    for &seed in &candidates {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start (George-Liu)
        let mut root = seed;
        let (mut last, mut depth) = bfs_levels(root);
        loop {
            let cand = *last.iter().min_by_key(|&&v| (degree[v], v)).unwrap();
            let (l2, d2) = bfs_levels(cand);
            if d2 > depth {
                root = cand;
                last = l2;
                depth = d2;
            } else {
                break;
            }
        }

        let start = order.len();
        visited[root] = true;
        order.push(root);
        let mut head = start;
        let mut nbrs = Vec::new();
        while head < order.len() {
            let v = order[head];
            head += 1;
            nbrs.clear();
            nbrs.extend(a.row(v).map(|(w, _)| w).filter(|&w| !visited[w]));
            nbrs.sort_by_key(|&w| (degree[w], w));
            for &w in &nbrs {
                if !visited[w] {
                    visited[w] = true;
                    order.push(w);
                }
            }
        }
    }
    order.reverse();
    order
}

/// Envelope (skyline) Cholesky factor `P A P^T = L L^T`, row-oriented.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (k, &i) in perm.iter().enumerate() {
            inv[i] = k;
        }

        let mut first = vec![0usize; n];
        for (k, &i) in perm.iter().enumerate() {
            first[k] = a.row(i).map(|(j, _)| inv[j]).filter(|&j| j <= k).min().unwrap_or(k);
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for k in 0..n {
            let len = k - first[k] + 1;
            offset.push(offset[k] + len);
        }
        let mut data = vec![0.0; offset[n]];
        for (k, &i) in perm.iter().enumerate() {
            for (j, v) in a.row(i) {
                let c = inv[j];
                if c <= k {
                    data[offset[k] + c - first[k]] = v;
                }
            }
        }

        for k in 0..n {
            let fk = first[k];
            let base_k = offset[k];
            for c in fk..k {
                let fc = first[c];
                let start = fk.max(fc);
                let base_c = offset[c];
                let row_k = &data[base_k + start - fk..base_k + c - fk];
                let row_c = &data[base_c + start - fc..base_c + c - fc];
                let s = dot(row_k, row_c);
                let diag_c = data[base_c + c - fc];
                let idx = base_k + c - fk;
                data[idx] = (data[idx] - s) / diag_c;
            }
            let row = &data[base_k..base_k + k - fk];
            let s = dot(row, row);
            let d = data[base_k + k - fk] - s;
            if !(d > 0.0) {
                return Err(Error::Singular { row: perm[k], pivot: d });
            }
            data[base_k + k - fk] = d.sqrt();
        }
        Ok(Self {
            perm,
            first,
            offset,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        // L y = Pb
        for k in 0..n {
            let fk = self.first[k];
            let base = self.offset[k];
            let s = dot(&self.data[base..base + k - fk], &y[fk..k]);
            y[k] = (y[k] - s) / self.data[base + k - fk];
        }
        // L^T x = y
        for k in (0..n).rev() {
            let fk = self.first[k];
            let base = self.offset[k];
            y[k] /= self.data[base + k - fk];
            let yk = y[k];
            for (c, l) in (fk..k).zip(&self.data[base..base + k - fk]) {
                y[c] -= l * yk;
            }
        }
        let mut x = vec![0.0; n];
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = y[k];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn triplets_are_summed() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 1, 2.0), (0, 0, 3.0), (1, 1, 5.0)]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(0, 1), 2.0);
        assert_eq!(a.get(1, 0), 0.0);
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn pcg_and_cholesky_agree_on_1d_laplacian() {
        let a = laplacian_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let (x, rep) = pcg(&a, &b, None, 1e-12, 500).unwrap();
        assert!(rep.relative_residual <= 1e-12);
        let chol = EnvelopeCholesky::factor(&a).unwrap();
        let y = chol.solve(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-9);
        }
        let r: Vec<f64> = a.mul_vec(&y).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm(&r) < 1e-12);
    }

    #[test]
    fn pcg_flags_indefinite_matrix() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, -1.0)]);
        let err = pcg(&a, &[0.0, 1.0], None, 1e-10, 10).unwrap_err();
        assert!(matches!(err, Error::Indefinite { .. }));
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(EnvelopeCholesky::factor(&a), Err(Error::Singular { .. })));
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = laplacian_1d(17);
        let mut p = reverse_cuthill_mckee(&a);
        p.sort();
        assert_eq!(p, (0..17).collect::<Vec<_>>());
    }
}
