//! Subspace recovery and regression accuracy metrics.

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::egop::EgopEstimate;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{singular_values, symmetric_eigen, thin_qr, Matrix};
use crate::regressor::Regressor;

const RANK_TOL: f64 = 1e-10;
const EIGEN_GAP_TOL: f64 = 1e-12;

/// Basis of a k-dimensional subspace of ℝᵈ, stored as d×k columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    columns: Matrix,
}

impl SubspaceBasis {
    /// Validates full numerical column rank.
    pub fn new(columns: Matrix) -> Result<Self> {
        let (d, k) = (columns.nrows(), columns.ncols());
        if k == 0 || k > d {
            return Err(Error::InvalidParameter(format!(
                "subspace basis must be d x k with 1 <= k <= d, got {d}x{k}"
            )));
        }
        let reference = columns.column_norms().into_iter().fold(0.0, f64::max);
        let rank = if reference > 0.0 {
            thin_qr(&columns)?.numerical_rank(reference, RANK_TOL)
        } else {
            0
        };
        if rank < k {
            return Err(Error::RankDeficient { rank, expected: k });
        }
        Ok(SubspaceBasis { columns })
    }

    /// Row span of an s×d matrix, e.g. the index matrix of a ridge function.
    pub fn row_span(b: &Matrix) -> Result<Self> {
        SubspaceBasis::new(b.transpose())
    }

    pub fn columns(&self) -> &Matrix {
        &self.columns
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAngleReport {
    /// Principal angles in [0, π/2], ascending.
    pub angles: Vec<f64>,
    pub max_angle: f64,
}

/// Principal angles between two subspaces of equal dimension.
///
/// Both bases are orthonormalized by QR; the singular values of `Q_uᵀ Q_w`
/// are the cosines of the angles.
pub fn principal_angles(u: &SubspaceBasis, w: &SubspaceBasis) -> Result<PrincipalAngleReport> {
    check_dim(u.ambient_dim(), w.ambient_dim())?;
    check_dim(u.dim(), w.dim())?;
    let qu = thin_qr(u.columns())?.q;
    let qw = thin_qr(w.columns())?.q;
    let cross = qu.transpose().matmul(&qw)?;
    // Descending cosines give ascending angles. Small angles are taken from
    // the sines, the singular values of Q_w − Q_u·C, since arccos loses
    // precision near 1.
    let cosines = singular_values(&cross);
    let residual = qw.sub(&qu.matmul(&cross)?)?;
    let mut sines = singular_values(&residual);
    sines.reverse();
    let angles: Vec<f64> = cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            let c = c.clamp(0.0, 1.0);
            if c * c < 0.5 {
                c.acos()
            } else {
                s.clamp(0.0, 1.0).asin()
            }
        })
        .collect();
    let max_angle = *angles.last().expect("k >= 1");
    Ok(PrincipalAngleReport { angles, max_angle })
}

/// Leading eigenvectors of an EGOP matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TopEigenspace {
    pub basis: SubspaceBasis,
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// The k-th and (k+1)-th eigenvalues coincide, so the subspace is not
    /// uniquely determined.
    pub ill_defined: bool,
}

/// Span of the eigenvectors of the `k` largest eigenvalues. Each vector is
/// signed so that its largest-magnitude entry is positive.
pub fn top_eigvec_subspace(h: &EgopEstimate, k: usize) -> Result<TopEigenspace> {
    top_eigvec_subspace_of(&h.matrix, k)
}

pub fn top_eigvec_subspace_of(matrix: &Matrix, k: usize) -> Result<TopEigenspace> {
    let d = matrix.nrows();
    if k == 0 || k > d {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= k <= {d}, got k = {k}"
        )));
    }
    let eig = symmetric_eigen(matrix)?;
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| eig.vectors.column(j)).collect();
    for v in &mut cols {
        let pivot = v.iter().copied().fold(
            0.0_f64,
            |best, e| if e.abs() > best.abs() { e } else { best },
        );
        if pivot < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
    }
    let ill_defined = k < d && (eig.values[k - 1] - eig.values[k]).abs() <= EIGEN_GAP_TOL;
    Ok(TopEigenspace {
        basis: SubspaceBasis::new(Matrix::from_columns(&cols)?)?,
        eigenvalues: eig.values,
        ill_defined,
    })
}

/// Maximum principal angle between the top-k eigenspace of `h` and `truth`.
pub fn max_angle_to(h: &EgopEstimate, truth: &SubspaceBasis) -> Result<f64> {
    let top = top_eigvec_subspace(h, truth.dim())?;
    Ok(principal_angles(&top.basis, truth)?.max_angle)
}

/// Mean squared prediction error on `test`.
pub fn mse<R: Regressor + ?Sized>(predictor: &R, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set".into()));
    }
    check_dim(predictor.input_dim(), test.dim())?;
    let sse: f64 = (0..test.n())
        .map(|i| {
            let r = predictor.predict_point(test.point(i)) - test.y()[i];
            r * r
        })
        .sum();
    Ok(sse / test.n() as f64)
}
