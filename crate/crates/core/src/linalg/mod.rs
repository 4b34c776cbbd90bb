//! Dense matrix kernels: SVD (full and leading triplet) and symmetric eigensolvers.
//!
//! Everything here is a pure function of its inputs.

mod eigen;
mod svd;

pub use eigen::{symmetric_eigen, symmetric_top_k, SymmetricEigen, TopEigen};
pub use svd::{full_svd, leading_triplet, FullSvd, SvdTriplet, DENSE_SVD_LIMIT};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// `Σ σ u vᵀ` over the given triplets.
    pub fn outer_sum(rows: usize, cols: usize, terms: &[(f64, &[f64], &[f64])]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for &(s, u, v) in terms {
            for i in 0..rows {
                let su = s * u[i];
                let row = &mut m.data[i * cols..(i + 1) * cols];
                for (x, vj) in row.iter_mut().zip(v) {
                    *x += su * vj;
                }
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Gᵀ y`
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            axpy(yi, self.row(i), &mut out);
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != 0.0 {
                    axpy(a, other.row(k), dst);
                }
            }
        }
        out
    }

    /// `GᵀG` (cols × cols).
    pub fn gram_cols(&self) -> Self {
        let n = self.cols;
        let mut out = Self::zeros(n, n);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..n {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                let dst = &mut out.data[a * n + a..(a + 1) * n];
                axpy(ra, &r[a..], dst);
            }
        }
        symmetrize_upper(&mut out);
        out
    }

    /// `GGᵀ` (rows × rows).
    pub fn gram_rows(&self) -> Self {
        let m = self.rows;
        let mut out = Self::zeros(m, m);
        for a in 0..m {
            for b in a..m {
                out.data[a * m + b] = dot(self.row(a), self.row(b));
            }
        }
        symmetrize_upper(&mut out);
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_inner(self).sqrt()
    }

    /// `⟨A, B⟩_F = Σ A_ij B_ij`.
    pub fn frobenius_inner(&self, other: &DenseMatrix) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        dot(&self.data, &other.data)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Self {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| s * x).collect(),
        }
    }
}

fn symmetrize_upper(m: &mut DenseMatrix) {
    let n = m.rows;
    for a in 0..n {
        for b in 0..a {
            m.data[a * n + b] = m.data[b * n + a];
        }
    }
}

/// Dot product with four independent accumulators (fixed order, so deterministic).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// `y += a x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Deterministic, generic start vector (Weyl sequence, zero-mean).
pub(crate) fn weyl_vector(n: usize) -> Vec<f64> {
    const PHI: f64 = 0.618_033_988_749_894_9;
    let mut x: Vec<f64> = (0..n)
        .map(|i| ((i as f64 + 1.0) * PHI).fract() - 0.5 + 1e-3)
        .collect();
    let nrm = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nrm);
    x
}

/// Removes the components of `x` along each (unit) vector in `basis`.
pub(crate) fn orthogonalize(x: &mut [f64], basis: &[Vec<f64>]) {
    for q in basis {
        let c = dot(x, q);
        axpy(-c, q, x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_length() {
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn gram_matches_matmul() {
        let g = DenseMatrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        let gt = g.transpose();
        assert_eq!(g.gram_cols(), gt.matmul(&g));
        assert_eq!(g.gram_rows(), g.matmul(&gt));
    }
}
