//! Expected gradient outer product (EGOP) estimation from a fitted regressor.
//!
//! Gradients are symmetric difference quotients
//! `(f̂(x + t·e_j) − f̂(x − t·e_j)) / 2t`, optionally zeroed when either shifted
//! point lands in an empty cell of some tree. `Ĥ` averages `ĝ ĝᵀ` over the
//! evaluation points, `A = d·Ĥ/‖Ĥ‖₂,₁` is the input transform, and the
//! importance weights `ω` are the diagonal of `Ĥ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::regressor::Regressor;

/// Evaluation points handled per parallel task; fixed so the reduction order
/// never depends on the thread count.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorMode {
    /// Keep component j only if `x ± t·e_j` both fall in populated leaves of
    /// every tree.
    #[default]
    ForestAllPopulated,
    /// Plain difference quotient.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgopEstimate {
    pub matrix: Matrix,
    pub step: f64,
    pub n_eval: usize,
    pub indicator_mode: IndicatorMode,
}

impl EgopEstimate {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Normalized input transform `A = d·Ĥ/‖Ĥ‖₂,₁`, or the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformMatrix {
    pub matrix: Matrix,
    /// EGOP the transform was normalized from; `None` for the identity.
    pub source: Option<EgopEstimate>,
}

impl TransformMatrix {
    pub fn identity(dim: usize) -> Self {
        TransformMatrix {
            matrix: Matrix::identity(dim),
            source: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_identity(&self) -> bool {
        self.matrix == Matrix::identity(self.dim())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matrix.matvec(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceWeights {
    /// Mean squared gradient component per input dimension.
    pub omega: Vec<f64>,
    /// `omega / Σ omega`, or uniform when every score is zero.
    pub normalized: Vec<f64>,
    /// Set when `Σ omega = 0` forced the uniform fallback.
    pub degenerate: bool,
}

impl ImportanceWeights {
    pub fn from_scores(omega: Vec<f64>) -> Self {
        let total: f64 = omega.iter().sum();
        let d = omega.len();
        if total > 0.0 && total.is_finite() {
            let normalized = omega.iter().map(|w| w / total).collect();
            ImportanceWeights {
                omega,
                normalized,
                degenerate: false,
            }
        } else {
            ImportanceWeights {
                omega,
                normalized: vec![1.0 / d as f64; d],
                degenerate: true,
            }
        }
    }

    /// Normalized mass on the given (zero-based) coordinates.
    pub fn mass_on(&self, coords: &[usize]) -> f64 {
        coords.iter().map(|&i| self.normalized[i]).sum()
    }
}

fn check_step(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "difference step must be positive, got {t}"
        )))
    }
}

fn gradient_unchecked<R: Regressor + ?Sized>(
    estimator: &R,
    x: &[f64],
    t: f64,
    mode: IndicatorMode,
) -> Vec<f64> {
    let mut shifted = x.to_vec();
    (0..x.len())
        .map(|j| {
            shifted[j] = x[j] + t;
            let up = estimator.predict_point(&shifted);
            let up_ok = mode == IndicatorMode::Off || estimator.is_populated(&shifted);
            shifted[j] = x[j] - t;
            let down = estimator.predict_point(&shifted);
            let down_ok = mode == IndicatorMode::Off || estimator.is_populated(&shifted);
            shifted[j] = x[j];
            if up_ok && down_ok {
                (up - down) / (2.0 * t)
            } else {
                0.0
            }
        })
        .collect()
}

/// Difference-quotient gradient of `estimator` at `x`.
pub fn approx_gradient<R: Regressor + ?Sized>(
    estimator: &R,
    x: &[f64],
    t: f64,
    mode: IndicatorMode,
) -> Result<Vec<f64>> {
    check_step(t)?;
    check_dim(estimator.input_dim(), x.len())?;
    Ok(gradient_unchecked(estimator, x, t, mode))
}

/// Gradient estimates at every row of `points`, in row order.
pub fn gradients<R: Regressor + ?Sized>(
    estimator: &R,
    points: &Matrix,
    t: f64,
    mode: IndicatorMode,
) -> Result<Vec<Vec<f64>>> {
    check_step(t)?;
    if points.nrows() == 0 {
        return Err(Error::Empty("no evaluation points".into()));
    }
    check_dim(estimator.input_dim(), points.ncols())?;
    let rows: Vec<usize> = (0..points.nrows()).collect();
    Ok(rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&i| gradient_unchecked(estimator, points.row(i), t, mode))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect())
}

/// `(1/n) Σ g gᵀ`, accumulated in input order and symmetrized.
pub fn outer_product_mean(grads: &[Vec<f64>], dim: usize) -> Result<Matrix> {
    if grads.is_empty() {
        return Err(Error::Empty("no gradient vectors".into()));
    }
    let mut h = Matrix::zeros(dim, dim);
    for g in grads {
        check_dim(dim, g.len())?;
        for a in 0..dim {
            if g[a] == 0.0 {
                continue;
            }
            for b in 0..dim {
                h[(a, b)] += g[a] * g[b];
            }
        }
    }
    let mut h = h.scaled(1.0 / grads.len() as f64);
    h.symmetrize();
    Ok(h)
}

pub fn estimate_egop<R: Regressor + ?Sized>(
    estimator: &R,
    eval_points: &Matrix,
    t: f64,
    mode: IndicatorMode,
) -> Result<EgopEstimate> {
    let grads = gradients(estimator, eval_points, t, mode)?;
    Ok(EgopEstimate {
        matrix: outer_product_mean(&grads, estimator.input_dim())?,
        step: t,
        n_eval: grads.len(),
        indicator_mode: mode,
    })
}

/// `A = d·H/‖H‖₂,₁`. Fails with [`Error::DegenerateEgop`] for a zero matrix.
pub fn normalize_transform(h: &EgopEstimate) -> Result<TransformMatrix> {
    let d = h.dim();
    check_dim(d, h.matrix.ncols())?;
    let norm = h.matrix.l21_norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateEgop);
    }
    Ok(TransformMatrix {
        matrix: h.matrix.scaled(d as f64 / norm),
        source: Some(h.clone()),
    })
}

/// Mean squared gradient component per coordinate, from the same gradient
/// vectors [`estimate_egop`] would use.
pub fn importance_weights<R: Regressor + ?Sized>(
    estimator: &R,
    eval_points: &Matrix,
    t: f64,
    mode: IndicatorMode,
) -> Result<ImportanceWeights> {
    let grads = gradients(estimator, eval_points, t, mode)?;
    Ok(weights_from_gradients(&grads, estimator.input_dim()))
}

pub(crate) fn weights_from_gradients(grads: &[Vec<f64>], dim: usize) -> ImportanceWeights {
    let mut omega = vec![0.0; dim];
    for g in grads {
        for (w, gi) in omega.iter_mut().zip(g) {
            *w += gi * gi;
        }
    }
    let n = grads.len() as f64;
    ImportanceWeights::from_scores(omega.into_iter().map(|w| w / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Dataset;
    use crate::mondrian::{ForestConfig, MondrianForest};
    use crate::regressor::ExactOracle;

    fn grid_points(n: usize, d: usize) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..d)
                    .map(|j| ((i * (j + 3)) as f64 * 0.173).fract())
                    .collect()
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn quotient_is_exact_for_linear_and_quadratic() {
        let c = [1.5, -2.0, 0.25];
        let lin = ExactOracle::new(3, |x: &[f64]| c.iter().zip(x).map(|(a, b)| a * b).sum());
        let g = approx_gradient(&lin, &[0.3, 0.9, -4.0], 0.37, IndicatorMode::Off).unwrap();
        for (gi, ci) in g.iter().zip(&c) {
            assert!((gi - ci).abs() < 1e-12);
        }
        let sq = ExactOracle::new(3, |x: &[f64]| x[0] * x[0]);
        let g = approx_gradient(&sq, &[0.3, 0.5, 0.5], 0.1, IndicatorMode::Off).unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12);
        assert_eq!(&g[1..], &[0.0, 0.0]);
    }

    #[test]
    fn nonpositive_step_is_rejected() {
        let f = ExactOracle::new(1, |x: &[f64]| x[0]);
        assert!(approx_gradient(&f, &[0.0], 0.0, IndicatorMode::Off).is_err());
        assert!(approx_gradient(&f, &[0.0], -1.0, IndicatorMode::Off).is_err());
    }

    #[test]
    fn egop_of_linear_is_outer_product() {
        let c = [1.0, 2.0, -1.0, 0.5];
        let f = ExactOracle::new(4, |x: &[f64]| c.iter().zip(x).map(|(a, b)| a * b).sum());
        let h = estimate_egop(&f, &grid_points(30, 4), 0.1, IndicatorMode::Off).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                assert!((h.matrix[(a, b)] - c[a] * c[b]).abs() < 1e-12);
            }
        }
        assert_eq!(h.n_eval, 30);
    }

    #[test]
    fn constant_estimator_gives_zero_and_degenerate_transform() {
        let f = ExactOracle::new(3, |_: &[f64]| 4.2);
        let h = estimate_egop(&f, &grid_points(10, 3), 0.1, IndicatorMode::Off).unwrap();
        assert_eq!(h.matrix, Matrix::zeros(3, 3));
        assert!(matches!(
            normalize_transform(&h),
            Err(Error::DegenerateEgop)
        ));
        let w = importance_weights(&f, &grid_points(10, 3), 0.1, IndicatorMode::Off).unwrap();
        assert!(w.degenerate);
        assert_eq!(w.normalized, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn empty_eval_points_is_an_error() {
        let f = ExactOracle::new(2, |x: &[f64]| x[0]);
        assert!(matches!(
            estimate_egop(&f, &Matrix::zeros(0, 2), 0.1, IndicatorMode::Off),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn normalize_examples() {
        let est = |m: Matrix| EgopEstimate {
            matrix: m,
            step: 0.1,
            n_eval: 1,
            indicator_mode: IndicatorMode::Off,
        };
        let a = normalize_transform(&est(Matrix::identity(4))).unwrap();
        assert_eq!(a.matrix, Matrix::identity(4));
        let a = normalize_transform(&est(Matrix::diagonal(&[2.0, 0.0, 0.0, 0.0, 0.0]))).unwrap();
        assert_eq!(a.matrix, Matrix::diagonal(&[5.0, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn importance_examples() {
        let pts = grid_points(20, 4);
        let f = ExactOracle::new(4, |x: &[f64]| x[0]);
        let w = importance_weights(&f, &pts, 0.1, IndicatorMode::Off).unwrap();
        for (o, e) in w.omega.iter().zip([1.0, 0.0, 0.0, 0.0]) {
            assert!((o - e).abs() < 1e-12);
        }
        let f = ExactOracle::new(4, |x: &[f64]| x[0] + x[1]);
        let w = importance_weights(&f, &pts, 0.1, IndicatorMode::Off).unwrap();
        for (o, e) in w.normalized.iter().zip([0.5, 0.5, 0.0, 0.0]) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_forest_has_zero_gradient() {
        let x = grid_points(40, 3);
        let y = (0..40).map(|i| i as f64).collect();
        let data = Dataset::new(x, y).unwrap();
        let forest = MondrianForest::fit(&data, &ForestConfig::new(0.0, 3, 1)).unwrap();
        for mode in [IndicatorMode::Off, IndicatorMode::ForestAllPopulated] {
            let g = approx_gradient(&forest, data.point(5), 0.1, mode).unwrap();
            assert_eq!(g, vec![0.0; 3]);
        }
    }

    #[test]
    fn indicator_zeroes_components_touching_empty_cells() {
        // Two points far apart; a deep tree leaves the middle empty.
        let x = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let data = Dataset::new(x, vec![0.0, 10.0]).unwrap();
        let forest = MondrianForest::fit(&data, &ForestConfig::new(50.0, 1, 3)).unwrap();
        let probe = [0.05];
        let off = approx_gradient(&forest, &probe, 0.3, IndicatorMode::Off).unwrap();
        let on = approx_gradient(&forest, &probe, 0.3, IndicatorMode::ForestAllPopulated).unwrap();
        let populated =
            forest.all_populated(&[0.35]).unwrap() && forest.all_populated(&[-0.25]).unwrap();
        if populated {
            assert_eq!(on, off);
        } else {
            assert_eq!(on, vec![0.0]);
        }
    }
}
