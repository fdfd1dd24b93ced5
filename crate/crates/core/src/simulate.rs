//! The simulation design: intercept plus standard-normal covariates,
//! standard-normal random-effects covariates, correlated normal random effects
//! and asymmetric Laplace errors whose skew matches the target quantile, so
//! that β_τ equals the generating coefficients for every τ.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix};
use crate::model::{al_sample, AlParams, ClusterData, LongitudinalDataset, QuantileLevel};
use crate::seed::derive_seed;

pub const SELECTED_CLUSTER_COUNTS: [usize; 2] = [50, 300];
pub const SELECTED_TAUS: [f64; 3] = [0.05, 0.5, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub cluster_counts: Vec<usize>,
    pub cluster_size: usize,
    pub taus: Vec<f64>,
    pub replications: usize,
    pub delta: Vec<f64>,
    /// Scale of the AL error.
    pub sigma_true: f64,
    /// Random-effects covariance, row by row.
    pub sigma_re: Vec<Vec<f64>>,
    pub seed: u64,
    /// Restrict to M ∈ {50, 300} and τ ∈ {0.05, 0.5, 0.95}.
    pub selected_only: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            cluster_counts: vec![50, 100, 200, 300],
            cluster_size: 3,
            taus: vec![0.05, 0.1, 0.5, 0.9, 0.95],
            replications: 100,
            delta: vec![0.8, 0.5, 1.0],
            sigma_true: 0.2,
            sigma_re: vec![vec![0.8, 0.5], vec![0.5, 1.0]],
            seed: 1,
            selected_only: false,
        }
    }
}

pub fn is_selected(m: usize, tau: f64) -> bool {
    SELECTED_CLUSTER_COUNTS.contains(&m) && SELECTED_TAUS.iter().any(|t| (t - tau).abs() < 1e-12)
}

impl ScenarioConfig {
    /// The (M, τ) grid in M-major order.
    pub fn scenarios(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for &m in &self.cluster_counts {
            for &t in &self.taus {
                if !self.selected_only || is_selected(m, t) {
                    out.push((m, t));
                }
            }
        }
        out
    }

    pub fn sigma_re_matrix(&self) -> Result<Matrix> {
        let q = self.sigma_re.len();
        let rows: Vec<&[f64]> = self.sigma_re.iter().map(Vec::as_slice).collect();
        let m = Matrix::from_rows(&rows)?;
        if m.cols() != q {
            return Err(Error::DimensionMismatch {
                what: "random-effects covariance",
                expected: q,
                found: m.cols(),
            });
        }
        Ok(m)
    }

    /// Seed of replication `rep` of scenario `(m, tau_index)`.
    pub fn replication_seed(&self, m: usize, tau_index: usize, rep: usize) -> u64 {
        derive_seed(self.seed, &[m as u64, tau_index as u64, rep as u64])
    }

    pub fn validate(&self) -> Result<()> {
        if self.cluster_size == 0 || self.cluster_counts.iter().any(|&m| m == 0) {
            return Err(Error::EmptyDataset);
        }
        if self.delta.is_empty() {
            return Err(Error::InvalidControl("delta needs at least an intercept"));
        }
        for &t in &self.taus {
            QuantileLevel::new(t)?;
        }
        if !(self.sigma_true >= 0.0) {
            return Err(Error::NonPositiveScale(self.sigma_true));
        }
        let s = self.sigma_re_matrix()?;
        if !s.is_symmetric(1e-12) {
            return Err(Error::NotSymmetric);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub sigma_re: Matrix,
}

/// Generates one dataset of `m` clusters at quantile level `tau`.
///
/// A zero `sigma_true` or an all-zero random-effects covariance switches the
/// corresponding component off.
pub fn generate_dataset<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    m: usize,
    tau: QuantileLevel,
    rng: &mut R,
) -> Result<(LongitudinalDataset, Truth)> {
    config.validate()?;
    let p = config.delta.len();
    let sigma_re = config.sigma_re_matrix()?;
    let q = sigma_re.rows();
    let chol = if sigma_re.as_slice().iter().all(|&v| v == 0.0) {
        Matrix::zeros(q, q)
    } else {
        cholesky(&sigma_re)?
    };
    let noise = if config.sigma_true > 0.0 {
        Some(AlParams::new(0.0, config.sigma_true, tau)?)
    } else {
        None
    };
    let n = config.cluster_size;

    let mut clusters = Vec::with_capacity(m);
    for i in 0..m {
        let std: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
        let u = chol.matvec(&std)?;
        let mut x = Matrix::zeros(n, p);
        let mut z = Matrix::zeros(n, q);
        let mut y = vec![0.0; n];
        for j in 0..n {
            x[(j, 0)] = 1.0;
            for k in 1..p {
                x[(j, k)] = rng.sample(StandardNormal);
            }
            for k in 0..q {
                z[(j, k)] = rng.sample(StandardNormal);
            }
            let eps = noise.as_ref().map_or(0.0, |al| al_sample(al, rng));
            let fixed: f64 = (0..p).map(|k| x[(j, k)] * config.delta[k]).sum();
            let random: f64 = (0..q).map(|k| z[(j, k)] * u[k]).sum();
            y[j] = fixed + random + eps;
        }
        clusters.push(ClusterData::new(format!("{}", i + 1), y, x, z)?);
    }
    Ok((
        LongitudinalDataset::new(clusters)?,
        Truth {
            beta: config.delta.clone(),
            sigma: config.sigma_true,
            sigma_re,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_design_shapes() {
        let config = ScenarioConfig::default();
        assert_eq!(config.scenarios().len(), 20);
        let selected = ScenarioConfig {
            selected_only: true,
            ..config.clone()
        };
        assert_eq!(
            selected.scenarios(),
            vec![(50, 0.05), (50, 0.5), (50, 0.95), (300, 0.05), (300, 0.5), (300, 0.95)]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (data, truth) =
            generate_dataset(&config, 50, QuantileLevel::new(0.1).unwrap(), &mut rng).unwrap();
        assert_eq!(data.n_obs(), 150);
        assert_eq!((data.p(), data.q()), (3, 2));
        assert_eq!(truth.beta, vec![0.8, 0.5, 1.0]);
        assert!(data.clusters().iter().all(|c| c.x[(0, 0)] == 1.0));
    }

    #[test]
    fn noiseless_variant_is_exact() {
        let config = ScenarioConfig {
            sigma_true: 0.0,
            sigma_re: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (data, _) =
            generate_dataset(&config, 20, QuantileLevel::new(0.5).unwrap(), &mut rng).unwrap();
        for (y, x) in data.observations() {
            let fitted: f64 = x.iter().zip(&config.delta).map(|(a, b)| a * b).sum();
            assert_eq!(y, fitted);
        }
    }

    #[test]
    fn errors_have_zero_median() {
        let config = ScenarioConfig {
            sigma_re: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            cluster_size: 1,
            ..Default::default()
        };
        let m = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (data, _) =
            generate_dataset(&config, m, QuantileLevel::new(0.5).unwrap(), &mut rng).unwrap();
        let below = data
            .observations()
            .filter(|(y, x)| *y - x.iter().zip(&config.delta).map(|(a, b)| a * b).sum::<f64>() <= 0.0)
            .count();
        let frac = below as f64 / m as f64;
        assert!((frac - 0.5).abs() < 3.0 * (0.25 / m as f64).sqrt(), "{frac}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let config = ScenarioConfig {
            taus: vec![1.5],
            ..Default::default()
        };
        assert!(config.validate().is_err());
        let config = ScenarioConfig {
            sigma_re: vec![vec![1.0, 0.2], vec![0.0, 1.0]],
            ..Default::default()
        };
        assert_eq!(config.validate(), Err(Error::NotSymmetric));
    }
}
