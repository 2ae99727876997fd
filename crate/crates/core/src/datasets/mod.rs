//! Regression data: the container type, synthetic ridge-function scenarios,
//! the SEIR/Ebola reproduction-number study, and CSV ingestion.

mod csv_io;
pub mod quadrature;
mod scenario;
mod seir;

pub use csv_io::{load_csv, read_csv, read_features, write_csv};
pub use scenario::{
    sample_scenario, true_egop, RidgeFunction, Scenario, ScenarioSpec, ScenarioTruth,
    DEFAULT_TRUE_EGOP_SAMPLES, SCENARIO_DIM, SCENARIO_NOISE_SD, SCENARIO_RANK,
};
pub use seir::{
    monte_carlo_seir_egop, sample_seir, seir_r0, seir_r0_gradient, seir_r0_gradient_physical,
    seir_true_egop, seir_true_egop_with_nodes, Region, SeirSpec, SEIR_DIM, SEIR_PARAMETER_NAMES,
};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Inputs `x` (one row per sample) and responses `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Vec<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Dataset {
            x,
            y,
            feature_names: None,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Dataset {
            x: Matrix::zeros(0, dim),
            y: Vec::new(),
            feature_names: None,
        }
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            data.extend_from_slice(self.x.row(i));
        }
        Dataset {
            x: Matrix::from_row_major(indices.len(), self.dim(), data)
                .expect("row-major size is consistent"),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Applies `x ↦ A·x` to every input, keeping labels.
    pub fn map_inputs(&self, a: &Matrix) -> Result<Dataset> {
        if a.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: a.ncols(),
            });
        }
        let mut x = Matrix::zeros(self.n(), a.nrows());
        for i in 0..self.n() {
            a.matvec_into(self.x.row(i), x.row_mut(i));
        }
        Ok(Dataset {
            x,
            y: self.y.clone(),
            feature_names: None,
        })
    }

    pub fn mean_y(&self) -> f64 {
        if self.y.is_empty() {
            0.0
        } else {
            self.y.iter().sum::<f64>() / self.y.len() as f64
        }
    }
}
