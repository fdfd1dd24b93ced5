//! Gauss–Hermite rules for the standard normal weight and the integrated
//! log-likelihood obtained by tensor-product quadrature over the random
//! effects.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceParams;
use crate::error::{Error, Result};
use crate::linalg::{dot, tridiagonal_eigen};
use crate::model::{check_loss, FixedEffects, LongitudinalDataset, QuantileLevel};

pub const MAX_KNOTS: usize = 25;
const MAX_GRID_POINTS: usize = 10_000_000;

/// K-point Gauss–Hermite rule for N(0, 1): `Σ w_k f(v_k) ≈ E f(V)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl HermiteRule {
    pub fn knots(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Quadrature approximation of `E f(V)`, `V ~ N(0, 1)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| w * f(v))
            .sum()
    }
}

/// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
/// polynomials (zero diagonal, off-diagonal `√1, …, √(K−1)`).
pub fn hermite_rule(knots: usize) -> Result<HermiteRule> {
    if knots == 0 || knots > MAX_KNOTS {
        return Err(Error::KnotsOutOfRange(knots));
    }
    let diag = vec![0.0; knots];
    let off: Vec<f64> = (1..knots).map(|k| (k as f64).sqrt()).collect();
    let (vals, vecs) = tridiagonal_eigen(&diag, &off);
    let mut pairs: Vec<(f64, f64)> = vals
        .iter()
        .enumerate()
        .map(|(k, &v)| (v, vecs[(0, k)] * vecs[(0, k)]))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // enforce the exact symmetry of the rule
    let mut nodes = vec![0.0; knots];
    let mut weights = vec![0.0; knots];
    for i in 0..knots {
        let j = knots - 1 - i;
        nodes[i] = 0.5 * (pairs[i].0 - pairs[j].0);
        weights[i] = 0.5 * (pairs[i].1 + pairs[j].1);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(HermiteRule { nodes, weights })
}

/// All `K^q` standardized nodes with product weights, in lexicographic
/// order (last coordinate varies fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorGrid {
    dim: usize,
    knots: usize,
    /// Row-major `len × dim`.
    points: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl TensorGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn knots(&self) -> usize {
        self.knots
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, g: usize) -> &[f64] {
        &self.points[g * self.dim..(g + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }
}

pub fn tensor_grid(rule: &HermiteRule, q: usize) -> Result<TensorGrid> {
    let k = rule.knots();
    let too_large = Error::GridTooLarge { knots: k, dim: q };
    let n = u32::try_from(q)
        .ok()
        .and_then(|e| k.checked_pow(e))
        .filter(|&n| n <= MAX_GRID_POINTS)
        .ok_or(too_large)?;
    if q == 0 {
        return Err(Error::InvalidStructure("q must be at least 1"));
    }
    let mut points = Vec::with_capacity(n * q);
    let mut weights = Vec::with_capacity(n);
    let mut idx = vec![0usize; q];
    for _ in 0..n {
        let mut w = 1.0;
        for &i in &idx {
            points.push(rule.nodes[i]);
            w *= rule.weights[i];
        }
        weights.push(w);
        for d in (0..q).rev() {
            idx[d] += 1;
            if idx[d] < k {
                break;
            }
            idx[d] = 0;
        }
    }
    let log_weights = weights.iter().map(|w| w.ln()).collect();
    Ok(TensorGrid {
        dim: q,
        knots: k,
        points,
        weights,
        log_weights,
    })
}

/// Precomputed flat layout of a dataset for repeated evaluation of the
/// integrated log-likelihood at different parameters.
#[derive(Debug, Clone)]
pub struct QuadratureLoglik<'a> {
    grid: &'a TensorGrid,
    tau: f64,
    p: usize,
    q: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    /// `offsets[i]..offsets[i + 1]` are cluster i's observations.
    offsets: Vec<usize>,
}

impl<'a> QuadratureLoglik<'a> {
    pub fn new(data: &LongitudinalDataset, tau: QuantileLevel, grid: &'a TensorGrid) -> Result<Self> {
        if grid.dim() != data.q() {
            return Err(Error::DimensionMismatch {
                what: "quadrature grid dimension",
                expected: data.q(),
                found: grid.dim(),
            });
        }
        let n = data.n_obs();
        let (p, q) = (data.p(), data.q());
        let mut y = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n * p);
        let mut z = Vec::with_capacity(n * q);
        let mut offsets = Vec::with_capacity(data.n_clusters() + 1);
        offsets.push(0);
        for c in data.clusters() {
            y.extend_from_slice(&c.y);
            x.extend_from_slice(c.x.as_slice());
            z.extend_from_slice(c.z.as_slice());
            offsets.push(y.len());
        }
        Ok(QuadratureLoglik {
            grid,
            tau: tau.value(),
            p,
            q,
            y,
            x,
            z,
            offsets,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.offsets.len() - 1
    }

    /// ℓ_GQ at `(β, L, σ)` where `L` is the Cholesky factor of Σ given as a
    /// row-major q×q slice.
    pub fn eval(&self, beta: &[f64], chol: &[f64], sigma: f64) -> f64 {
        let mut buf = vec![0.0; self.grid.len()];
        let mut zl = vec![0.0; self.q];
        let mut total = 0.0;
        for i in 0..self.n_clusters() {
            total += self.cluster_term(i, beta, chol, sigma, &mut buf, &mut zl);
        }
        total
    }

    /// One cluster's contribution, `log Σ_g w_g p(y_i | u = L v_g)`.
    fn cluster_term(
        &self,
        i: usize,
        beta: &[f64],
        chol: &[f64],
        sigma: f64,
        buf: &mut [f64],
        zl: &mut [f64],
    ) -> f64 {
        let (p, q, tau) = (self.p, self.q, self.tau);
        let inv_sigma = 1.0 / sigma;
        let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
        let log_norm = (hi - lo) as f64 * (tau * (1.0 - tau) * inv_sigma).ln();
        buf.copy_from_slice(self.grid.log_weights());
        for j in lo..hi {
            let r0 = self.y[j] - dot(&self.x[j * p..(j + 1) * p], beta);
            // zᵀ L v = (Lᵀ z)ᵀ v
            let zj = &self.z[j * q..(j + 1) * q];
            for (c, out) in zl.iter_mut().enumerate() {
                *out = (c..q).map(|r| chol[r * q + c] * zj[r]).sum();
            }
            let points = self.grid.points.chunks_exact(q);
            for (b, v) in buf.iter_mut().zip(points) {
                let r = r0 - dot(zl, v);
                *b -= check_loss(r, tau) * inv_sigma;
            }
        }
        log_norm + log_sum_exp(buf)
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// `Σ_i log{ Σ_g p(y_i | u = L v_g) w_g }` with `L = chol(Σ(θ))`.
pub fn integrated_loglik(
    data: &LongitudinalDataset,
    beta: &FixedEffects,
    cov: &CovarianceParams,
    sigma: f64,
    tau: QuantileLevel,
    grid: &TensorGrid,
) -> Result<f64> {
    if beta.len() != data.p() {
        return Err(Error::DimensionMismatch {
            what: "fixed effects",
            expected: data.p(),
            found: beta.len(),
        });
    }
    if cov.structure().q() != data.q() {
        return Err(Error::DimensionMismatch {
            what: "covariance dimension",
            expected: data.q(),
            found: cov.structure().q(),
        });
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::NonPositiveScale(sigma));
    }
    let ll = QuadratureLoglik::new(data, tau, grid)?;
    let value = ll.eval(beta.as_slice(), cov.cholesky_factor().as_slice(), sigma);
    if value.is_nan() || value == f64::NEG_INFINITY {
        return Err(Error::NonFinite("integrated log-likelihood"));
    }
    Ok(value)
}
