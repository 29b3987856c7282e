//! Small dense row-major matrices.
//!
//! Only what the decoder needs: products with optional transposes written
//! into preallocated outputs, Cholesky factorization and solves, and a Jacobi
//! eigenvalue routine for covariance checks. Nothing here allocates except
//! the constructors and the explicitly allocating helpers.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Self {
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        out.set_product(self, false, rhs, false);
        out
    }

    pub fn add(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape());
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape());
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs_diff(&self, rhs: &Matrix) -> f64 {
        assert_eq!(self.shape(), rhs.shape());
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0_f64;
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                worst = worst.max(libm::fabs(self[(r, c)] - self[(c, r)]));
            }
        }
        worst
    }

    /// Replaces the matrix by `(M + Mᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        for r in 0..n {
            for c in (r + 1)..n {
                let v = 0.5 * (self.data[r * n + c] + self.data[c * n + r]);
                self.data[r * n + c] = v;
                self.data[c * n + r] = v;
            }
        }
    }

    pub fn copy_from(&mut self, src: &Matrix) {
        assert_eq!(self.shape(), src.shape());
        self.data.copy_from_slice(&src.data);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self = op(a) · op(b)` where `op` optionally transposes.
    ///
    /// Panics on shape mismatch. Does not allocate.
    pub fn set_product(&mut self, a: &Matrix, transpose_a: bool, b: &Matrix, transpose_b: bool) {
        let (m, inner) = if transpose_a {
            (a.cols, a.rows)
        } else {
            (a.rows, a.cols)
        };
        let (inner_b, n) = if transpose_b {
            (b.cols, b.rows)
        } else {
            (b.rows, b.cols)
        };
        assert_eq!(inner, inner_b, "inner dimensions differ");
        assert_eq!((self.rows, self.cols), (m, n), "output shape mismatch");

        let a_at = |i: usize, p: usize| {
            if transpose_a {
                a.data[p * a.cols + i]
            } else {
                a.data[i * a.cols + p]
            }
        };
        match transpose_b {
            false => {
                // Row-oriented accumulation keeps the inner loop contiguous in b.
                self.fill(0.0);
                for i in 0..m {
                    let out = &mut self.data[i * n..(i + 1) * n];
                    for p in 0..inner {
                        let av = a_at(i, p);
                        if av == 0.0 {
                            continue;
                        }
                        let brow = &b.data[p * n..(p + 1) * n];
                        for (o, bv) in out.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
            true => {
                for i in 0..m {
                    for j in 0..n {
                        let brow = &b.data[j * b.cols..(j + 1) * b.cols];
                        let mut acc = 0.0;
                        for (p, bv) in brow.iter().enumerate() {
                            acc += a_at(i, p) * bv;
                        }
                        self.data[i * n + j] = acc;
                    }
                }
            }
        }
    }

    /// `out = self · v`.
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(v, &mut out);
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// In-place Cholesky factorization `A = L Lᵀ`; the lower triangle of `a`
/// receives `L` and the strict upper triangle is zeroed.
///
/// On failure returns the index of the first non-positive pivot.
pub fn cholesky_in_place(a: &mut Matrix) -> core::result::Result<(), usize> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let d = &mut a.data;
    for j in 0..n {
        let mut diag = d[j * n + j];
        for p in 0..j {
            diag -= d[j * n + p] * d[j * n + p];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(j);
        }
        let ljj = libm::sqrt(diag);
        d[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = d[i * n + j];
            for p in 0..j {
                s -= d[i * n + p] * d[j * n + p];
            }
            d[i * n + j] = s / ljj;
        }
        for c in (j + 1)..n {
            d[j * n + c] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ X = B` in place for every column of `b`, given the factor
/// from [`cholesky_in_place`].
pub fn cholesky_solve_in_place(l: &Matrix, b: &mut Matrix) {
    let n = l.rows;
    assert_eq!(b.rows, n);
    let m = b.cols;
    for col in 0..m {
        // forward: L y = b
        for i in 0..n {
            let mut s = b.data[i * m + col];
            for p in 0..i {
                s -= l.data[i * n + p] * b.data[p * m + col];
            }
            b.data[i * m + col] = s / l.data[i * n + i];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = b.data[i * m + col];
            for p in (i + 1)..n {
                s -= l.data[p * n + i] * b.data[p * m + col];
            }
            b.data[i * m + col] = s / l.data[i * n + i];
        }
    }
}

/// Solves `A X = B` for symmetric positive-definite `A`.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut l = a.clone();
    if let Err(pivot) = cholesky_in_place(&mut l) {
        bail!(Numerical, "matrix is not positive definite (pivot {pivot})");
    }
    let mut x = b.clone();
    cholesky_solve_in_place(&l, &mut x);
    Ok(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    m.symmetrize();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                off += m[(r, c)] * m[(r, c)];
            }
        }
        let scale: f64 = m.data.iter().map(|v| v * v).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = libm::copysign(1.0, theta)
                    / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Matrix {
        let b = Matrix::from_fn(n, n, |r, c| libm::sin((r * 7 + c * 3 + 1) as f64));
        let mut a = Matrix::zeros(n, n);
        a.set_product(&b, false, &b, true);
        for i in 0..n {
            a[(i, i)] += 0.5;
        }
        a
    }

    #[test]
    fn product_transposes_agree() {
        let a = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 - 5.0);
        let b = Matrix::from_fn(4, 2, |r, c| (r + 2 * c) as f64 * 0.5);
        let direct = a.matmul(&b);
        let mut via_t = Matrix::zeros(3, 2);
        via_t.set_product(&a.transpose(), true, &b.transpose(), true);
        assert_eq!(direct, via_t);
        assert_eq!(
            direct[(0, 0)],
            -5.0 * 0.0 + -4.0 * 0.5 + -3.0 * 1.0 + -2.0 * 1.5
        );
    }

    #[test]
    fn cholesky_solve_recovers_rhs() {
        let a = spd(6);
        let x_true = Matrix::from_fn(6, 2, |r, c| r as f64 - c as f64);
        let b = a.matmul(&x_true);
        let x = solve_spd(&a, &b).unwrap();
        assert!(x.max_abs_diff(&x_true) < 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(cholesky_in_place(&mut a), Err(1));
    }

    #[test]
    fn jacobi_eigenvalues_of_known_matrix() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = symmetric_eigenvalues(&a);
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
        let tr = spd(5).trace();
        let sum: f64 = symmetric_eigenvalues(&spd(5)).iter().sum();
        assert!((tr - sum).abs() < 1e-9);
    }
}
