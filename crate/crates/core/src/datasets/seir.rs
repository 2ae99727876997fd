//! Basic reproduction number of the SEIR Ebola model and its gradient in
//! normalized parameter coordinates.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quadrature::{gauss_legendre, tensor_expectation};
use super::Dataset;
use crate::egop::{EgopEstimate, IndicatorMode};
use crate::error::{check_dim, Error, Result};
use crate::linalg::Matrix;
use crate::rng::stream_rng;

pub const SEIR_DIM: usize = 8;

pub const SEIR_PARAMETER_NAMES: [&str; SEIR_DIM] = [
    "beta1", "beta2", "beta3", "rho1", "gamma1", "gamma2", "omega", "psi",
];

const LIBERIA: [(f64, f64); SEIR_DIM] = [
    (0.1, 0.4),
    (0.1, 0.4),
    (0.05, 0.2),
    (0.41, 1.0),
    (0.0276, 0.1702),
    (0.081, 0.21),
    (0.25, 0.5),
    (0.0833, 0.7),
];

const SIERRA_LEONE: [(f64, f64); SEIR_DIM] = [
    (0.1, 0.4),
    (0.1, 0.4),
    (0.05, 0.2),
    (0.41, 1.0),
    (0.0275, 0.1569),
    (0.1236, 0.384),
    (0.25, 0.5),
    (0.0833, 0.7),
];

const QUADRATURE_NODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Liberia,
    SierraLeone,
}

impl Region {
    pub const ALL: [Region; 2] = [Region::Liberia, Region::SierraLeone];

    pub fn name(self) -> &'static str {
        match self {
            Region::Liberia => "liberia",
            Region::SierraLeone => "sierra_leone",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "liberia" => Ok(Region::Liberia),
            "sierra_leone" | "sierraleone" => Ok(Region::SierraLeone),
            _ => Err(Error::InvalidParameter(format!("unknown region '{s}'"))),
        }
    }
}

/// Uniform parameter ranges of one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeirSpec {
    pub region: Region,
    pub ranges: [(f64, f64); SEIR_DIM],
}

impl SeirSpec {
    pub fn new(region: Region) -> Self {
        let ranges = match region {
            Region::Liberia => LIBERIA,
            Region::SierraLeone => SIERRA_LEONE,
        };
        SeirSpec { region, ranges }
    }

    /// `p = l + (u − l)/2 · (x + 1)`, mapping `[−1, 1]⁸` onto the ranges.
    pub fn to_physical(&self, x: &[f64]) -> Result<[f64; SEIR_DIM]> {
        check_dim(SEIR_DIM, x.len())?;
        let mut p = [0.0; SEIR_DIM];
        for (k, pk) in p.iter_mut().enumerate() {
            let (l, u) = self.ranges[k];
            *pk = l + 0.5 * (u - l) * (x[k] + 1.0);
        }
        Ok(p)
    }

    pub fn midpoint(&self) -> [f64; SEIR_DIM] {
        self.ranges.map(|(l, u)| 0.5 * (l + u))
    }

    fn half_widths(&self) -> [f64; SEIR_DIM] {
        self.ranges.map(|(l, u)| 0.5 * (u - l))
    }
}

fn check_params(p: &[f64]) -> Result<()> {
    check_dim(SEIR_DIM, p.len())?;
    let (gamma1, gamma2, omega, psi) = (p[4], p[5], p[6], p[7]);
    if !(omega > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "omega must be > 0, got {omega}"
        )));
    }
    if !(gamma2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma2 must be > 0, got {gamma2}"
        )));
    }
    if !(gamma1 + psi > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma1 + psi must be > 0, got {}",
            gamma1 + psi
        )));
    }
    Ok(())
}

fn r0_unchecked(p: &[f64]) -> f64 {
    let [b1, b2, b3, rho1, g1, g2, om, psi] = [p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]];
    (b1 + b2 * rho1 * g1 / om + b3 / g2 * psi) / (g1 + psi)
}

fn gradient_physical_unchecked(p: &[f64]) -> [f64; SEIR_DIM] {
    let [b1, b2, b3, rho1, g1, g2, om, psi] = [p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]];
    let den = g1 + psi;
    let r0 = (b1 + b2 * rho1 * g1 / om + b3 / g2 * psi) / den;
    [
        1.0 / den,
        rho1 * g1 / (om * den),
        psi / (g2 * den),
        b2 * g1 / (om * den),
        b2 * rho1 / (om * den) - r0 / den,
        -b3 * psi / (g2 * g2 * den),
        -b2 * rho1 * g1 / (om * om * den),
        b3 / (g2 * den) - r0 / den,
    ]
}

/// `R₀ = (β₁ + β₂ρ₁γ₁/ω + β₃ψ/γ₂) / (γ₁ + ψ)` in physical parameters ordered
/// as [`SEIR_PARAMETER_NAMES`].
pub fn seir_r0(p: &[f64]) -> Result<f64> {
    check_params(p)?;
    Ok(r0_unchecked(p))
}

pub fn seir_r0_gradient_physical(p: &[f64]) -> Result<[f64; SEIR_DIM]> {
    check_params(p)?;
    Ok(gradient_physical_unchecked(p))
}

/// Gradient with respect to normalized coordinates at physical point `p`:
/// the physical gradient scaled by `(u − l)/2` per coordinate.
pub fn seir_r0_gradient(spec: &SeirSpec, p: &[f64]) -> Result<[f64; SEIR_DIM]> {
    let mut g = seir_r0_gradient_physical(p)?;
    for (gk, h) in g.iter_mut().zip(spec.half_widths()) {
        *gk *= h;
    }
    Ok(g)
}

fn normalized_gradient(spec: &SeirSpec, half: &[f64; SEIR_DIM], x: &[f64]) -> [f64; SEIR_DIM] {
    let p = spec.to_physical(x).expect("length checked by caller");
    let mut g = gradient_physical_unchecked(&p);
    for (gk, h) in g.iter_mut().zip(half) {
        *gk *= h;
    }
    g
}

fn egop_from_flat(flat: Vec<f64>, n_eval: usize) -> EgopEstimate {
    let mut m = Matrix::from_row_major(SEIR_DIM, SEIR_DIM, flat).expect("8x8");
    m.symmetrize();
    EgopEstimate {
        matrix: m,
        step: 0.0,
        n_eval,
        indicator_mode: IndicatorMode::Off,
    }
}

/// EGOP of `R₀` in normalized coordinates under the uniform law on `[−1,1]⁸`,
/// by the 8-point tensor Gauss–Legendre rule.
pub fn seir_true_egop(region: Region) -> Result<EgopEstimate> {
    seir_true_egop_with_nodes(region, QUADRATURE_NODES)
}

pub fn seir_true_egop_with_nodes(region: Region, nodes: usize) -> Result<EgopEstimate> {
    let spec = SeirSpec::new(region);
    let half = spec.half_widths();
    let rule = gauss_legendre(nodes)?;
    let flat = tensor_expectation(&rule, SEIR_DIM, SEIR_DIM * SEIR_DIM, |x, out| {
        let g = normalized_gradient(&spec, &half, x);
        for a in 0..SEIR_DIM {
            for b in 0..SEIR_DIM {
                out[a * SEIR_DIM + b] = g[a] * g[b];
            }
        }
    });
    Ok(egop_from_flat(flat, nodes.pow(SEIR_DIM as u32)))
}

/// Monte Carlo counterpart of [`seir_true_egop`] with `n_mc` uniform draws.
pub fn monte_carlo_seir_egop(region: Region, n_mc: usize, seed: u64) -> Result<EgopEstimate> {
    if n_mc == 0 {
        return Err(Error::InvalidParameter("need n_mc >= 1".into()));
    }
    let spec = SeirSpec::new(region);
    let half = spec.half_widths();
    const BLOCK: usize = 8192;
    let blocks = n_mc.div_ceil(BLOCK);
    let partials: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let len = BLOCK.min(n_mc - b * BLOCK);
            let mut acc = vec![0.0; SEIR_DIM * SEIR_DIM];
            let mut x = [0.0; SEIR_DIM];
            for _ in 0..len {
                for v in x.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                let g = normalized_gradient(&spec, &half, &x);
                for a in 0..SEIR_DIM {
                    for c in 0..SEIR_DIM {
                        acc[a * SEIR_DIM + c] += g[a] * g[c];
                    }
                }
            }
            acc
        })
        .collect();
    let mut flat = vec![0.0; SEIR_DIM * SEIR_DIM];
    for p in partials {
        for (t, v) in flat.iter_mut().zip(p) {
            *t += v;
        }
    }
    flat.iter_mut().for_each(|v| *v /= n_mc as f64);
    Ok(egop_from_flat(flat, n_mc))
}

/// `n` samples with normalized inputs `x ~ U[−1,1]⁸` and `y = R₀(p(x)) + ε`.
pub fn sample_seir(region: Region, n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("need n >= 1".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidParameter("noise sd must be >= 0".into()));
    }
    let spec = SeirSpec::new(region);
    let noise =
        Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidParameter(format!("noise: {e}")))?;
    let mut xrng = stream_rng(seed, 0);
    let mut nrng = stream_rng(seed, 1);
    let mut x = Matrix::zeros(n, SEIR_DIM);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row_mut(i);
        for v in row.iter_mut() {
            *v = xrng.random_range(-1.0..1.0);
        }
        let p = spec.to_physical(row)?;
        let eps = if noise_sd > 0.0 {
            noise.sample(&mut nrng)
        } else {
            0.0
        };
        y.push(r0_unchecked(&p) + eps);
    }
    let names = SEIR_PARAMETER_NAMES.iter().map(|s| s.to_string()).collect();
    Dataset::new(x, y)?.with_feature_names(names)
}
