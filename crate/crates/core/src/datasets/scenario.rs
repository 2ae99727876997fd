//! Synthetic ridge-function scenarios `f(x) = g(Bx)` on `[0,1]^5`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::egop::{EgopEstimate, IndicatorMode};
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::rng::stream_rng;
use crate::subspace::SubspaceBasis;

pub const SCENARIO_DIM: usize = 5;
pub const SCENARIO_RANK: usize = 2;
pub const SCENARIO_NOISE_SD: f64 = 0.1;
pub const DEFAULT_TRUE_EGOP_SAMPLES: usize = 100_000;

const B1: [[f64; 5]; 2] = [[1.0, 1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 1.0, 1.0]];

// First two rows of a fixed random orthogonal matrix.
const B2: [[f64; 5]; 2] = [
    [
        -0.49424072,
        0.11211344,
        -0.27421644,
        -0.62783889,
        0.52324025,
    ],
    [-0.0014017, 0.71072528, 0.69059226, -0.11064719, 0.07554563],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    One,
    Two,
    Three,
    Four,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::One,
        Scenario::Two,
        Scenario::Three,
        Scenario::Four,
    ];

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Scenario::One),
            2 => Ok(Scenario::Two),
            3 => Ok(Scenario::Three),
            4 => Ok(Scenario::Four),
            _ => Err(Error::InvalidParameter(format!(
                "scenario must be 1..=4, got {id}"
            ))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Scenario::One => 1,
            Scenario::Two => 2,
            Scenario::Three => 3,
            Scenario::Four => 4,
        }
    }

    /// 1→(B₁,g₁), 2→(B₁,g₂), 3→(B₂,g₁), 4→(B₂,g₂).
    pub fn components(self) -> ([[f64; 5]; 2], RidgeFunction) {
        match self {
            Scenario::One => (B1, RidgeFunction::G1),
            Scenario::Two => (B1, RidgeFunction::G2),
            Scenario::Three => (B2, RidgeFunction::G1),
            Scenario::Four => (B2, RidgeFunction::G2),
        }
    }
}

/// Link function `g` of the ridge model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeFunction {
    /// `u₁⁴ + u₂⁴`
    G1,
    /// `exp(−¼ min(u₁², u₂²))`
    G2,
    /// `u₁`; makes `f` linear.
    FirstCoordinate,
    /// `(u₁ + u₂)²`
    SquaredSum,
}

impl RidgeFunction {
    pub fn value(self, u: &[f64]) -> f64 {
        match self {
            RidgeFunction::G1 => u[0].powi(4) + u[1].powi(4),
            RidgeFunction::G2 => (-0.25 * (u[0] * u[0]).min(u[1] * u[1])).exp(),
            RidgeFunction::FirstCoordinate => u[0],
            RidgeFunction::SquaredSum => (u[0] + u[1]).powi(2),
        }
    }

    /// Gradient in `u`. For `G2` on the tie set `u₁² = u₂²` the first
    /// coordinate is taken as the minimizer.
    pub fn gradient(self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        match self {
            RidgeFunction::G1 => {
                out[0] = 4.0 * u[0].powi(3);
                out[1] = 4.0 * u[1].powi(3);
            }
            RidgeFunction::G2 => {
                let j = if u[1] * u[1] < u[0] * u[0] { 1 } else { 0 };
                out[j] = -0.5 * u[j] * (-0.25 * u[j] * u[j]).exp();
            }
            RidgeFunction::FirstCoordinate => out[0] = 1.0,
            RidgeFunction::SquaredSum => {
                let s = 2.0 * (u[0] + u[1]);
                out[0] = s;
                out[1] = s;
            }
        }
    }

    pub fn min_inputs(self) -> usize {
        match self {
            RidgeFunction::FirstCoordinate => 1,
            _ => 2,
        }
    }
}

/// A ridge model `y = g(Bx) + ε` with `x ~ U[0,1]^d`, `ε ~ N(0, noise_sd²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: Option<u8>,
    pub b: Matrix,
    pub g: RidgeFunction,
    pub noise_sd: f64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario) -> Self {
        let (b, g) = scenario.components();
        ScenarioSpec {
            id: Some(scenario.id()),
            b: Matrix::from_rows(&b).expect("constant shape"),
            g,
            noise_sd: SCENARIO_NOISE_SD,
        }
    }

    pub fn custom(b: Matrix, g: RidgeFunction, noise_sd: f64) -> Result<Self> {
        if b.nrows() < g.min_inputs() {
            return Err(Error::InvalidParameter(format!(
                "link function needs {} index rows, B has {}",
                g.min_inputs(),
                b.nrows()
            )));
        }
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(Error::InvalidParameter("noise sd must be >= 0".into()));
        }
        Ok(ScenarioSpec {
            id: None,
            b,
            g,
            noise_sd,
        })
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    pub fn dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn f(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.g.value(&self.b.matvec(x)?))
    }

    /// Analytic `∇f(x) = Bᵀ ∇g(Bx)`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, &mut out);
        Ok(out)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let s = self.b.nrows();
        let mut u = vec![0.0; s];
        self.b.matvec_into(x, &mut u);
        let mut gu = vec![0.0; s];
        self.g.gradient(&u, &mut gu);
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..s).map(|r| self.b[(r, j)] * gu[r]).sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTruth {
    pub spec: ScenarioSpec,
    /// Row span of `B`.
    pub subspace: SubspaceBasis,
}

impl ScenarioTruth {
    pub fn true_egop(&self, n_mc: usize, seed: u64) -> Result<EgopEstimate> {
        true_egop(&self.spec, n_mc, seed)
    }
}

/// `n` samples with `x ~ U[0,1]^d`. Inputs and noise use separate streams of
/// `seed`, so changing the noise level leaves `x` unchanged.
pub fn sample_scenario(
    spec: &ScenarioSpec,
    n: usize,
    seed: u64,
) -> Result<(Dataset, ScenarioTruth)> {
    if n == 0 {
        return Err(Error::InvalidParameter("need n >= 1".into()));
    }
    let d = spec.dim();
    let mut xrng = stream_rng(seed, 0);
    let mut nrng = stream_rng(seed, 1);
    let noise = Normal::new(0.0, spec.noise_sd)
        .map_err(|e| Error::InvalidParameter(format!("noise: {e}")))?;
    let mut x = Matrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    let mut u = vec![0.0; spec.b.nrows()];
    for i in 0..n {
        let row = x.row_mut(i);
        for v in row.iter_mut() {
            *v = xrng.random::<f64>();
        }
        spec.b.matvec_into(row, &mut u);
        let eps = if spec.noise_sd > 0.0 {
            noise.sample(&mut nrng)
        } else {
            0.0
        };
        y.push(spec.g.value(&u) + eps);
    }
    let truth = ScenarioTruth {
        spec: spec.clone(),
        subspace: SubspaceBasis::row_span(&spec.b)?,
    };
    Ok((Dataset::new(x, y)?, truth))
}

/// Monte Carlo `E[∇f ∇fᵀ]` over `x ~ U[0,1]^d` with analytic gradients.
/// Exact-gradient estimates carry `step = 0`.
pub fn true_egop(spec: &ScenarioSpec, n_mc: usize, seed: u64) -> Result<EgopEstimate> {
    if n_mc == 0 {
        return Err(Error::InvalidParameter("need n_mc >= 1".into()));
    }
    let d = spec.dim();
    let mut rng = stream_rng(seed, 2);
    let points: Vec<f64> = (0..n_mc * d).map(|_| rng.random::<f64>()).collect();
    let partials: Vec<Matrix> = points
        .par_chunks(4096 * d)
        .map(|chunk| {
            let mut acc = Matrix::zeros(d, d);
            let mut g = vec![0.0; d];
            for x in chunk.chunks(d) {
                spec.gradient_into(x, &mut g);
                for a in 0..d {
                    for b in 0..d {
                        acc[(a, b)] += g[a] * g[b];
                    }
                }
            }
            acc
        })
        .collect();
    let mut h = Matrix::zeros(d, d);
    for p in &partials {
        for a in 0..d {
            for b in 0..d {
                h[(a, b)] += p[(a, b)];
            }
        }
    }
    let mut h = h.scaled(1.0 / n_mc as f64);
    h.symmetrize();
    Ok(EgopEstimate {
        matrix: h,
        step: 0.0,
        n_eval: n_mc,
        indicator_mode: IndicatorMode::Off,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigen;
    use crate::subspace::{principal_angles, top_eigvec_subspace};

    #[test]
    fn scenario_one_noise_free_value() {
        let spec = ScenarioSpec::new(Scenario::One).with_noise(0.0);
        assert_eq!(spec.f(&[1.0, 1.0, 1.0, 0.0, 0.0]).unwrap(), 97.0);
        let spec = ScenarioSpec::new(Scenario::Two);
        assert_eq!(spec.f(&[0.0; 5]).unwrap(), 1.0);
    }

    #[test]
    fn mapping_of_ids() {
        assert_eq!(
            Scenario::from_id(3).unwrap().components().1,
            RidgeFunction::G1
        );
        assert_eq!(Scenario::from_id(4).unwrap().components().0, B2);
        assert_eq!(
            Scenario::from_id(2).unwrap().components(),
            (B1, RidgeFunction::G2)
        );
        assert!(Scenario::from_id(5).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_in_unit_cube() {
        let spec = ScenarioSpec::new(Scenario::Three);
        let (a, _) = sample_scenario(&spec, 50, 9).unwrap();
        let (b, _) = sample_scenario(&spec, 50, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.x().as_slice().iter().all(|v| (0.0..1.0).contains(v)));
        let (quiet, _) = sample_scenario(&spec.clone().with_noise(0.0), 50, 9).unwrap();
        assert_eq!(quiet.x(), a.x());
        for i in 0..50 {
            assert_eq!(quiet.y()[i], spec.f(quiet.point(i)).unwrap());
        }
    }

    #[test]
    fn g2_tie_breaks_to_first_coordinate() {
        let mut out = [0.0; 2];
        RidgeFunction::G2.gradient(&[0.5, -0.5], &mut out);
        assert!(out[0] != 0.0 && out[1] == 0.0);
    }

    #[test]
    fn linear_hook_gives_exact_rank_one_egop() {
        let b = Matrix::from_rows(&[[0.3, -1.0, 2.0, 0.0, 0.5]]).unwrap();
        let spec = ScenarioSpec::custom(b.clone(), RidgeFunction::FirstCoordinate, 0.0).unwrap();
        let h = true_egop(&spec, 1000, 1).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((h.matrix[(i, j)] - b[(0, i)] * b[(0, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn true_egop_has_rank_two_in_row_span() {
        for sc in Scenario::ALL {
            let spec = ScenarioSpec::new(sc);
            let h = true_egop(&spec, 20_000, 4).unwrap();
            let eig = symmetric_eigen(&h.matrix).unwrap();
            assert!(
                eig.values[2] < 1e-10 * h.matrix.trace(),
                "{sc:?}: {:?}",
                eig.values
            );
            let top = top_eigvec_subspace(&h, 2).unwrap();
            let truth = SubspaceBasis::row_span(&spec.b).unwrap();
            assert!(principal_angles(&top.basis, &truth).unwrap().max_angle < 1e-6);
        }
    }
}
