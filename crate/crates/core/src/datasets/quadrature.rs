//! Gauss–Legendre rules and tensor-product expectations over cubes.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Nodes (ascending) and weights of a 1-D rule on [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `P_n(x)` and `P_n'(x)` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let dp = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// n-point Gauss–Legendre rule by Newton iteration on the roots of `P_n`.
pub fn gauss_legendre(n: usize) -> Result<GaussLegendre> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "rule needs at least one node".into(),
        ));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(GaussLegendre { nodes, weights })
}

/// Expectation of a vector-valued `f` under the uniform law on `[-1, 1]^dim`,
/// using the tensor product of `rule` in every coordinate.
///
/// `f(x, out)` adds nothing itself: it overwrites `out` (length `out_len`)
/// with `f(x)`. Partial sums are formed over blocks of the leading
/// coordinates and combined in a fixed order.
pub fn tensor_expectation<F>(rule: &GaussLegendre, dim: usize, out_len: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let m = rule.nodes.len();
    if dim == 0 {
        let mut out = vec![0.0; out_len];
        f(&[], &mut out);
        return out;
    }
    let lead = dim.min(2);
    let blocks = m.pow(lead as u32);
    let inner_dims = dim - lead;
    let inner = m.pow(inner_dims as u32);
    // Uniform density on [-1,1] is 1/2 per coordinate.
    let density = 0.5_f64.powi(dim as i32);

    let partials: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut acc = vec![0.0; out_len];
            let mut val = vec![0.0; out_len];
            let mut x = vec![0.0; dim];
            let mut idx = vec![0usize; dim];
            let mut b = block;
            for k in (0..lead).rev() {
                idx[k] = b % m;
                b /= m;
            }
            for flat in 0..inner {
                let mut r = flat;
                for k in (lead..dim).rev() {
                    idx[k] = r % m;
                    r /= m;
                }
                let mut w = density;
                for k in 0..dim {
                    x[k] = rule.nodes[idx[k]];
                    w *= rule.weights[idx[k]];
                }
                f(&x, &mut val);
                for (a, v) in acc.iter_mut().zip(&val) {
                    *a += w * v;
                }
            }
            acc
        })
        .collect();

    let mut total = vec![0.0; out_len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}
