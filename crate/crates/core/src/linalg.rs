//! Small dense linear algebra.
//!
//! Everything here operates on matrices of dimension at most a few dozen
//! (EGOP matrices, subspace bases), so plain O(n³) Jacobi-type methods are
//! used throughout: cyclic Jacobi rotations for symmetric eigenproblems,
//! Householder reflections for thin QR, and one-sided Jacobi for singular
//! values.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice gives a 0×0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        Ok(Matrix::from_rows(columns)?.transpose())
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked `out = self · x`; lengths must already agree.
    pub(crate) fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.cols)
            .map(|j| {
                (0..self.rows)
                    .map(|i| self[(i, j)] * self[(i, j)])
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Sum of the Euclidean norms of the columns.
    pub fn l21_norm(&self) -> f64 {
        self.column_norms().iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    /// Replaces the matrix with `(M + Mᵀ)/2`. Square matrices only.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols, "symmetrize needs a square matrix");
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let m = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, ordered like `values`.
    pub vectors: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix.
///
/// Only the symmetric part of `a` is meaningful; callers should pass an
/// (at least numerically) symmetric matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if !a.is_finite() {
        return Err(Error::InvalidParameter(
            "eigendecomposition of a non-finite matrix".into(),
        ));
    }
    let mut m = a.clone();
    m.symmetrize();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m[(p, q)] * m[(p, q)])
            .sum();
        if off == 0.0 || off.sqrt() <= f64::EPSILON * 1e-2 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Thin QR factorization of an m×k matrix (m ≥ k) by Householder reflections.
#[derive(Debug, Clone)]
pub struct ThinQr {
    /// m×k with orthonormal columns.
    pub q: Matrix,
    /// k×k upper triangular.
    pub r: Matrix,
}

impl ThinQr {
    /// Number of diagonal entries of R exceeding `rel_tol` times the largest
    /// column norm of the factored matrix.
    pub fn numerical_rank(&self, reference: f64, rel_tol: f64) -> usize {
        let cutoff = rel_tol * reference;
        self.r.diag().iter().filter(|d| d.abs() > cutoff).count()
    }
}

pub fn thin_qr(a: &Matrix) -> Result<ThinQr> {
    let (m, k) = (a.nrows(), a.ncols());
    if k > m {
        return Err(Error::InvalidParameter(format!(
            "thin QR needs rows >= cols, got {m}x{k}"
        )));
    }
    let mut work = a.clone();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(k);
    for j in 0..k {
        let x: Vec<f64> = (j..m).map(|i| work[(i, j)]).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vnorm);
        for col in j..k {
            let dot: f64 = (j..m).map(|i| v[i - j] * work[(i, col)]).sum();
            for i in j..m {
                work[(i, col)] -= 2.0 * v[i - j] * dot;
            }
        }
        reflectors.push(Some(v));
    }

    let mut r = Matrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            r[(i, j)] = work[(i, j)];
        }
    }

    let mut q = Matrix::zeros(m, k);
    for i in 0..k {
        q[(i, i)] = 1.0;
    }
    for (j, refl) in reflectors.iter().enumerate().rev() {
        let Some(v) = refl else { continue };
        for col in 0..k {
            let dot: f64 = (j..m).map(|i| v[i - j] * q[(i, col)]).sum();
            for i in j..m {
                q[(i, col)] -= 2.0 * v[i - j] * dot;
            }
        }
    }
    Ok(ThinQr { q, r })
}

/// Singular values (descending) by one-sided Jacobi rotations on the columns.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let mut w = a.clone();
    let (m, n) = (w.nrows(), w.ncols());
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..m {
                    alpha += w[(r, i)] * w[(r, i)];
                    beta += w[(r, j)] * w[(r, j)];
                    gamma += w[(r, i)] * w[(r, j)];
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..m {
                    let wi = w[(r, i)];
                    let wj = w[(r, j)];
                    w[(r, i)] = c * wi - s * wj;
                    w[(r, j)] = s * wi + c * wj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv = w.column_norms();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn eigen_reconstructs_random_symmetric() {
        for seed in 0..20 {
            let a = random_symmetric(7, seed);
            let eig = symmetric_eigen(&a).unwrap();
            let lambda = Matrix::diagonal(&eig.values);
            let rec = eig
                .vectors
                .matmul(&lambda)
                .unwrap()
                .matmul(&eig.vectors.transpose())
                .unwrap();
            assert!(rec.sub(&a).unwrap().frobenius_norm() < 1e-12);
            let vtv = eig.vectors.transpose().matmul(&eig.vectors).unwrap();
            assert!(vtv.sub(&Matrix::identity(7)).unwrap().frobenius_norm() < 1e-12);
            assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn eigen_of_diagonal_is_sorted_diagonal() {
        let eig = symmetric_eigen(&Matrix::diagonal(&[1.0, 3.0, 0.0, 2.0])).unwrap();
        assert_eq!(eig.values, vec![3.0, 2.0, 1.0, 0.0]);
        assert_eq!(eig.vectors.column(0), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn qr_is_orthonormal_and_reconstructs() {
        let a = Matrix::from_rows(&[
            [1.0, 2.0],
            [0.5, -1.0],
            [3.0, 0.0],
            [0.0, 1.5],
            [-2.0, 0.25],
        ])
        .unwrap();
        let qr = thin_qr(&a).unwrap();
        let qtq = qr.q.transpose().matmul(&qr.q).unwrap();
        assert!(qtq.sub(&Matrix::identity(2)).unwrap().frobenius_norm() < 1e-14);
        let rec = qr.q.matmul(&qr.r).unwrap();
        assert!(rec.sub(&a).unwrap().frobenius_norm() < 1e-13);
        assert_eq!(qr.r[(1, 0)], 0.0);
    }

    #[test]
    fn qr_detects_dependent_columns() {
        let a = Matrix::from_columns(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]).unwrap();
        let qr = thin_qr(&a).unwrap();
        let reference = a.column_norms().into_iter().fold(0.0, f64::max);
        assert_eq!(qr.numerical_rank(reference, 1e-10), 1);
    }

    #[test]
    fn singular_values_match_eigenvalues_of_gram() {
        // Independent route: σ² are the eigenvalues of AᵀA.
        for seed in 0..10 {
            let a = random_symmetric(4, seed + 100)
                .matmul(&random_symmetric(4, seed + 200))
                .unwrap();
            let sv = singular_values(&a);
            let gram = a.transpose().matmul(&a).unwrap();
            let eig = symmetric_eigen(&gram).unwrap();
            for (s, l) in sv.iter().zip(&eig.values) {
                assert!((s * s - l).abs() < 1e-11 * (1.0 + l.abs()), "{s} {l}");
            }
        }
    }

    #[test]
    fn l21_norm_of_identity_is_dimension() {
        assert_eq!(Matrix::identity(6).l21_norm(), 6.0);
    }
}
