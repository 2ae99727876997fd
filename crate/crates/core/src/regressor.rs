/// A fitted (or exact) regression function that gradients and errors can be
/// evaluated against.
pub trait Regressor: Sync {
    fn input_dim(&self) -> usize;

    /// Prediction at `x`. Callers guarantee `x.len() == input_dim()`.
    fn predict_point(&self, x: &[f64]) -> f64;

    /// Whether the prediction at `x` is backed by training data. Exact
    /// functions are populated everywhere.
    fn is_populated(&self, _x: &[f64]) -> bool {
        true
    }
}

/// Wraps a closure as a [`Regressor`] that is populated everywhere.
pub struct ExactOracle<F> {
    dim: usize,
    f: F,
}

impl<F> ExactOracle<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        ExactOracle { dim, f }
    }
}

impl<F> Regressor for ExactOracle<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict_point(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}
