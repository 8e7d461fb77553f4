//! Dense row-major matrices plus the few factorizations the fitting code needs.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent methods shadow it whenever std is linked
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape does not match data length");
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `out = self * x`
    #[inline]
    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| f64::max(acc, (a - b).abs()))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin SVD with singular values sorted in decreasing order. Singular vectors belonging
/// to exactly zero singular values are returned as zero columns.
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD. Accurate for rank-deficient inputs, where every
/// small singular value is resolved to near its absolute rounding level.
pub fn svd(a: &Matrix) -> Svd {
    if a.rows < a.cols {
        let Svd { u, s, v } = svd(&a.transpose());
        return Svd { u: v, s, v: u };
    }
    let (m, n) = (a.rows, a.cols);
    // columns stored contiguously: w[j] is column j of the working matrix
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = dot(&w[i], &w[i]);
                let beta = dot(&w[j], &w[j]);
                let gamma = dot(&w[i], &w[j]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the factorization deterministic under ties
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(core::cmp::Ordering::Equal));
    let mut uo = Matrix::zeros(m, n);
    let mut vo = Matrix::zeros(n, n);
    let mut so = Vec::with_capacity(n);
    for (new, &old) in order.iter().enumerate() {
        let sv = norms[old];
        so.push(sv);
        if sv > 0.0 {
            for r in 0..m {
                uo.set(r, new, w[old][r] / sv);
            }
        }
        for r in 0..n {
            vo.set(r, new, v[old][r]);
        }
    }
    Svd { u: uo, s: so, v: vo }
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    for (x, y) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Number of singular values above `rel_cutoff * s[0]`.
pub fn numerical_rank(s: &[f64], rel_cutoff: f64) -> usize {
    match s.first() {
        Some(&s0) if s0 > 0.0 => s.iter().take_while(|&&x| x > rel_cutoff * s0).count(),
        _ => 0,
    }
}

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pinv(a: &Matrix, rel_cutoff: f64) -> Matrix {
    let Svd { u, s, v } = svd(a);
    let k = numerical_rank(&s, rel_cutoff);
    let mut out = Matrix::zeros(a.cols, a.rows);
    for i in 0..a.cols {
        for j in 0..a.rows {
            let mut acc = 0.0;
            for t in 0..k {
                acc += v.get(i, t) * u.get(j, t) / s[t];
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations, eigenvalues in
/// decreasing order and eigenvectors as columns.
pub fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    let mut q = Matrix::identity(n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j) * m.get(i, j))
            .sum();
        let diag: f64 = (0..n).map(|i| m.get(i, i) * m.get(i, i)).sum();
        if off <= 1e-30 * diag {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apr = m.get(p, r);
                if apr == 0.0 {
                    continue;
                }
                let theta = (m.get(r, r) - m.get(p, p)) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let (mkp, mkr) = (m.get(k, p), m.get(k, r));
                    m.set(k, p, c * mkp - s * mkr);
                    m.set(k, r, s * mkp + c * mkr);
                }
                for k in 0..n {
                    let (mpk, mrk) = (m.get(p, k), m.get(r, k));
                    m.set(p, k, c * mpk - s * mrk);
                    m.set(r, k, s * mpk + c * mrk);
                }
                for k in 0..n {
                    let (qkp, qkr) = (q.get(k, p), q.get(k, r));
                    q.set(k, p, c * qkp - s * qkr);
                    q.set(k, r, s * qkp + c * qkr);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m.get(j, j).partial_cmp(&m.get(i, i)).unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut vals = Vec::with_capacity(n);
    let mut vecs = Matrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        vals.push(m.get(old, old));
        for r in 0..n {
            vecs.set(r, new, q.get(r, old));
        }
    }
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_full_rank_square_is_inverse() {
        let a = Matrix::from_row_major(2, 2, vec![2.0, 1.0, 1.0, 3.0]);
        let p = pinv(&a, 1e-12);
        let id = a.matmul(&p);
        assert!(id.max_abs_diff(&Matrix::identity(2)) < 1e-14);
    }

    #[test]
    fn svd_is_sorted_and_reconstructs() {
        let a = Matrix::from_row_major(3, 2, vec![1.0, 0.0, 0.0, 5.0, 0.0, 0.0]);
        let d = svd(&a);
        assert!(d.s[0] >= d.s[1]);
        assert!((d.s[0] - 5.0).abs() < 1e-14);
        let mut us = d.u.clone();
        for r in 0..us.rows {
            for c in 0..us.cols {
                us.set(r, c, us.get(r, c) * d.s[c]);
            }
        }
        assert!(us.matmul(&d.v.transpose()).max_abs_diff(&a) < 1e-14);
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_row_major(rows, cols, data)
    }

    fn reconstruct(d: &Svd, k: usize) -> Matrix {
        let mut out = Matrix::zeros(d.u.rows, d.v.rows);
        for i in 0..d.u.rows {
            for j in 0..d.v.rows {
                out.set(i, j, (0..k).map(|t| d.u.get(i, t) * d.s[t] * d.v.get(j, t)).sum());
            }
        }
        out
    }

    #[test]
    fn svd_of_rank_deficient_products() {
        for seed in 0..300 {
            let (rows, cols) = [(7, 7), (9, 4), (3, 8)][seed as usize % 3];
            let a = random(rows, 2, seed).matmul(&random(2, cols, seed + 1000));
            let d = svd(&a);
            assert!(d.s[2] < 1e-14 * d.s[0]);
            assert!(reconstruct(&d, 2).max_abs_diff(&a) < 1e-13, "seed {seed}");
            let vtv = d.v.transpose().matmul(&d.v);
            for i in 0..2 {
                for j in 0..2 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((vtv.get(i, j) - e).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn symmetric_eigen_reconstructs() {
        for seed in 0..50 {
            let b = random(6, 6, seed);
            let a = b.matmul(&b.transpose());
            let (vals, q) = symmetric_eigen(&a);
            assert!(vals.windows(2).all(|w| w[0] >= w[1]));
            let mut ql = q.clone();
            for r in 0..6 {
                for c in 0..6 {
                    ql.set(r, c, q.get(r, c) * vals[c]);
                }
            }
            assert!(ql.matmul(&q.transpose()).max_abs_diff(&a) < 1e-12);
            assert!(q.transpose().matmul(&q).max_abs_diff(&Matrix::identity(6)) < 1e-13);
        }
    }

    #[test]
    fn numerical_rank_cutoff() {
        assert_eq!(numerical_rank(&[1.0, 1e-3, 1e-12], 1e-10), 2);
        assert_eq!(numerical_rank(&[0.0, 0.0], 1e-10), 0);
        assert_eq!(numerical_rank(&[], 1e-10), 0);
    }
}
