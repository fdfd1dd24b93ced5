//! Stochastic-approximation EM comparator.
//!
//! Each iteration draws `mc_samples` random effects per cluster from a
//! random-walk Metropolis–Hastings chain targeting `p(u | y_i)`, refits β on
//! the completed data by check-loss minimization, and smooths β, the AL scale
//! and the second moment of u with step size `γ_k`. The first
//! `ceil(memory_cutpoint · max_iter)` iterations use `γ_k = 1` (no memory).
//! The random-effects covariance is always unstructured.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceKind, CovarianceParams, CovarianceStructure};
use crate::error::{Error, Result};
use crate::estimation::{start_values, FitResult, SIGMA_FLOOR};
use crate::linalg::{cholesky, clip_eigenvalues, dot, Matrix};
use crate::model::{
    check_loss, ClusterData, FixedEffects, LongitudinalDataset, QuantileLevel,
};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::quadrature::integrated_loglik;
use crate::quadrature::{hermite_rule, tensor_grid};
use crate::seed::derive_seed;

const STABLE_ITERATIONS: usize = 3;
const EIGEN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaemControl {
    pub mc_samples: usize,
    pub max_iter: usize,
    pub memory_cutpoint: f64,
    /// Proposal sd as a multiple of each random effect's marginal sd.
    pub mh_proposal_sd: f64,
    pub convergence_tol: f64,
    pub seed: u64,
    /// Quadrature order used to report ℓ_GQ at the final estimates.
    pub knots: usize,
}

impl Default for SaemControl {
    fn default() -> Self {
        SaemControl {
            mc_samples: 20,
            max_iter: 500,
            memory_cutpoint: 0.2,
            mh_proposal_sd: 0.25,
            convergence_tol: 1e-4,
            seed: 0,
            knots: 7,
        }
    }
}

impl SaemControl {
    fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 || self.max_iter == 0 {
            return Err(Error::InvalidControl("mc_samples and max_iter must be positive"));
        }
        if !(self.memory_cutpoint > 0.0 && self.memory_cutpoint < 1.0) {
            return Err(Error::InvalidControl("memory_cutpoint must lie in (0, 1)"));
        }
        if !(self.mh_proposal_sd > 0.0) || !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidControl(
                "mh_proposal_sd and convergence_tol must be positive",
            ));
        }
        Ok(())
    }

    /// Last iteration of the no-memory phase.
    pub fn memory_end(&self) -> usize {
        (self.memory_cutpoint * self.max_iter as f64).ceil() as usize
    }
}

/// `γ_k`: 1 during the no-memory phase, then `1/(k − k₀)`.
pub fn sa_step_size(k: usize, control: &SaemControl) -> f64 {
    let k0 = control.memory_end();
    if k <= k0 {
        1.0
    } else {
        1.0 / (k - k0) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub samples: Vec<Vec<f64>>,
    pub accepted: usize,
    pub proposed: usize,
}

/// Random-walk Metropolis–Hastings for one cluster's random effects,
/// targeting `p(y_i | u) φ(u; 0, Σ)`. The chain starts at 0, runs
/// `n_samples` burn-in steps and keeps the next `n_samples` states.
#[allow(clippy::too_many_arguments)]
pub fn mh_sample_posterior<R: Rng + ?Sized>(
    cluster: &ClusterData,
    beta: &[f64],
    sigma_re: &Matrix,
    sigma: f64,
    tau: QuantileLevel,
    n_samples: usize,
    proposal_sd: f64,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    let q = cluster.z.cols();
    mh_sample_posterior_from(
        cluster,
        beta,
        sigma_re,
        sigma,
        tau,
        n_samples,
        proposal_sd,
        &vec![0.0; q],
        rng,
    )
}

/// As [`mh_sample_posterior`], but the chain starts at `start` instead of 0.
/// `fit_saem` uses this to continue each cluster's chain from its last state
/// of the previous iteration.
#[allow(clippy::too_many_arguments)]
pub fn mh_sample_posterior_from<R: Rng + ?Sized>(
    cluster: &ClusterData,
    beta: &[f64],
    sigma_re: &Matrix,
    sigma: f64,
    tau: QuantileLevel,
    n_samples: usize,
    proposal_sd: f64,
    start: &[f64],
    rng: &mut R,
) -> Result<PosteriorDraws> {
    let q = cluster.z.cols();
    if start.len() != q {
        return Err(Error::DimensionMismatch {
            what: "chain start",
            expected: q,
            found: start.len(),
        });
    }
    let chol = cholesky(sigma_re)?;
    let fixed: Vec<f64> = (0..cluster.len())
        .map(|j| cluster.y[j] - dot(cluster.x.row(j), beta))
        .collect();
    let t = tau.value();
    let inv_sigma = 1.0 / sigma;
    let log_target = |u: &[f64]| -> f64 {
        let mut lp = 0.0;
        for (j, r0) in fixed.iter().enumerate() {
            lp -= check_loss(r0 - dot(cluster.z.row(j), u), t) * inv_sigma;
        }
        // −½ uᵀΣ⁻¹u via forward substitution L w = u
        let mut w = [0.0f64; 8];
        let mut wv;
        let ws: &mut [f64] = if q <= 8 {
            &mut w[..q]
        } else {
            wv = vec![0.0; q];
            &mut wv[..]
        };
        for a in 0..q {
            let mut s = u[a];
            for b in 0..a {
                s -= chol[(a, b)] * ws[b];
            }
            ws[a] = s / chol[(a, a)];
        }
        lp - 0.5 * ws.iter().map(|v| v * v).sum::<f64>()
    };
    let step: Vec<f64> = (0..q)
        .map(|d| proposal_sd * sigma_re[(d, d)].sqrt())
        .collect();

    let mut current = start.to_vec();
    let mut current_lp = log_target(&current);
    let mut proposal = vec![0.0; q];
    let mut samples = Vec::with_capacity(n_samples);
    let mut accepted = 0;
    for it in 0..2 * n_samples {
        for d in 0..q {
            let e: f64 = rng.sample(StandardNormal);
            proposal[d] = current[d] + step[d] * e;
        }
        let lp = log_target(&proposal);
        let log_u: f64 = rng.random::<f64>().ln();
        if log_u < lp - current_lp {
            current.copy_from_slice(&proposal);
            current_lp = lp;
            accepted += 1;
        }
        if it >= n_samples {
            samples.push(current.clone());
        }
    }
    Ok(PosteriorDraws {
        samples,
        accepted,
        proposed: 2 * n_samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaemFit {
    pub fit: FitResult,
    /// Share of accepted MH proposals over the whole run.
    pub acceptance_rate: f64,
    /// Iterations in which the smoothed covariance had to be projected back
    /// onto positive-definite matrices.
    pub pd_violations: usize,
    pub control: SaemControl,
}

/// Completed-data check loss for β: one row per (cluster, draw, observation).
struct CompletedData<'a> {
    x: Vec<&'a [f64]>,
    base: Vec<f64>,
}

impl CompletedData<'_> {
    fn loss(&self, beta: &[f64], tau: f64) -> f64 {
        self.base
            .iter()
            .zip(&self.x)
            .map(|(r, x)| check_loss(r - dot(x, beta), tau))
            .sum()
    }
}

fn pack(beta: &[f64], sigma: f64, s: &Matrix) -> Vec<f64> {
    let mut v = beta.to_vec();
    v.push(sigma);
    for i in 0..s.rows() {
        for j in 0..=i {
            v.push(s[(i, j)]);
        }
    }
    v
}

/// Fits the LQMM by SAEM with an unstructured random-effects covariance.
pub fn fit_saem(
    data: &LongitudinalDataset,
    tau: QuantileLevel,
    control: &SaemControl,
) -> Result<SaemFit> {
    control.validate()?;
    let q = data.q();
    let structure = CovarianceStructure::new(CovarianceKind::GeneralPd, q)?;
    let start = start_values(data, tau, structure, true)?;
    let t = tau.value();
    let n_obs = data.n_obs();
    let mc = control.mc_samples;

    let mut beta = start.beta.0.clone();
    let mut sigma_stat = start.sigma;
    let mut s_stat = start.cov.to_matrix();
    let mut sigma_re = s_stat.clone();

    let mut x_rows = Vec::with_capacity(n_obs * mc);
    for c in data.clusters() {
        for _ in 0..mc {
            for j in 0..c.len() {
                x_rows.push(c.x.row(j));
            }
        }
    }
    let mut completed = CompletedData {
        x: x_rows,
        base: vec![0.0; n_obs * mc],
    };

    let mut chains = vec![vec![0.0; q]; data.n_clusters()];
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    let mut pd_violations = 0usize;
    let mut stable = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;
    let mut evaluations = 0usize;

    for k in 1..=control.max_iter {
        iterations = k;
        let sigma = sigma_stat.max(SIGMA_FLOOR);
        let mut second_moment = Matrix::zeros(q, q);
        let mut row = 0;
        for (i, c) in data.clusters().iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(control.seed, &[k as u64, i as u64]));
            let draws = mh_sample_posterior_from(
                c,
                &beta,
                &sigma_re,
                sigma,
                tau,
                mc,
                control.mh_proposal_sd,
                &chains[i],
                &mut rng,
            )?;
            if let Some(last) = draws.samples.last() {
                chains[i].clone_from(last);
            }
            accepted += draws.accepted;
            proposed += draws.proposed;
            for u in &draws.samples {
                for a in 0..q {
                    for b in 0..q {
                        second_moment[(a, b)] += u[a] * u[b];
                    }
                }
                for j in 0..c.len() {
                    completed.base[row] = c.y[j] - dot(c.z.row(j), u);
                    row += 1;
                }
            }
        }
        let second_moment = second_moment.scale(1.0 / (data.n_clusters() * mc) as f64);

        let f0 = completed.loss(&beta, t);
        let steps: Vec<f64> = beta.iter().map(|b| 0.05 * (b.abs() + sigma)).collect();
        let opts = NelderMeadOptions {
            max_iter: 400,
            f_tol: 1e-7 * (1.0 + f0),
            stall_window: 0,
            restarts: 1,
            record_trace: false,
        };
        let m_step = nelder_mead(|b| completed.loss(b, t), &beta, &steps, &opts);
        evaluations += m_step.evaluations;
        let sigma_hat = m_step.f / (n_obs * mc) as f64;

        let gamma = sa_step_size(k, control);
        let before = pack(&beta, sigma_stat.max(SIGMA_FLOOR), &sigma_re);
        for (b, bh) in beta.iter_mut().zip(&m_step.x) {
            *b += gamma * (bh - *b);
        }
        sigma_stat += gamma * (sigma_hat - sigma_stat);
        for a in 0..q {
            for b in 0..q {
                s_stat[(a, b)] += gamma * (second_moment[(a, b)] - s_stat[(a, b)]);
            }
        }
        sigma_re = if cholesky(&s_stat).is_ok() {
            s_stat.clone()
        } else {
            pd_violations += 1;
            clip_eigenvalues(&s_stat, EIGEN_FLOOR)
        };

        let after = pack(&beta, sigma_stat.max(SIGMA_FLOOR), &sigma_re);
        let rel = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (b - a).abs() / (a.abs() + 1e-3))
            .fold(0.0, f64::max);
        stable = if rel < control.convergence_tol { stable + 1 } else { 0 };
        if stable >= STABLE_ITERATIONS {
            converged = true;
            break;
        }
    }

    let sigma = sigma_stat.max(SIGMA_FLOOR);
    let cov = CovarianceParams::from_matrix(&sigma_re, structure)?;
    let beta = FixedEffects(beta);
    let grid = tensor_grid(&hermite_rule(control.knots)?, q)?;
    let loglik = integrated_loglik(data, &beta, &cov, sigma, tau, &grid)?;
    Ok(SaemFit {
        fit: FitResult {
            tau,
            beta,
            cov,
            sigma,
            loglik,
            converged,
            iterations,
            evaluations,
            elapsed_seconds: 0.0,
            trace: Vec::new(),
        },
        acceptance_rate: if proposed == 0 {
            0.0
        } else {
            accepted as f64 / proposed as f64
        },
        pd_violations,
        control: control.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{al_log_density, AlParams};
    use crate::simulate::{generate_dataset, ScenarioConfig};

    fn tau(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    #[test]
    fn defaults_match_the_reference_settings() {
        let c = SaemControl::default();
        assert_eq!((c.mc_samples, c.max_iter, c.memory_cutpoint), (20, 500, 0.2));
    }

    #[test]
    fn step_size_schedule() {
        let c = SaemControl::default();
        assert_eq!(sa_step_size(50, &c), 1.0);
        assert_eq!(sa_step_size(100, &c), 1.0);
        assert_eq!(sa_step_size(101, &c), 1.0);
        assert_eq!(sa_step_size(200, &c), 0.01);
        let mut last = 1.0;
        for k in 1..=c.max_iter {
            let g = sa_step_size(k, &c);
            assert!(g <= last);
            last = g;
        }
    }

    fn one_cluster(z: Matrix, y: Vec<f64>) -> ClusterData {
        let n = y.len();
        let x = Matrix::from_row_major(n, 1, vec![1.0; n]).unwrap();
        ClusterData::new("c", y, x, z).unwrap()
    }

    #[test]
    fn flat_likelihood_recovers_prior() {
        let c = one_cluster(Matrix::zeros(3, 2), vec![0.1, -0.3, 0.7]);
        let sigma_re = Matrix::from_rows(&[&[0.8, 0.5], &[0.5, 1.0]]).unwrap();
        // many short independent chains; each keeps its final states
        let mut draws = Vec::new();
        for s in 0..2000 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let d = mh_sample_posterior(&c, &[0.0], &sigma_re, 1.0, tau(0.5), 200, 1.0, &mut rng).unwrap();
            draws.extend(d.samples.into_iter().rev().step_by(40).take(5));
        }
        let n = draws.len() as f64;
        let mean0 = draws.iter().map(|u| u[0]).sum::<f64>() / n;
        let c01 = draws.iter().map(|u| u[0] * u[1]).sum::<f64>() / n;
        let v1 = draws.iter().map(|u| u[1] * u[1]).sum::<f64>() / n;
        assert!(mean0.abs() < 0.05, "{mean0}");
        assert!((c01 - 0.5).abs() < 0.06, "{c01}");
        assert!((v1 - 1.0).abs() < 0.08, "{v1}");

        // a huge AL scale flattens the likelihood the same way
        let c = one_cluster(Matrix::identity(2), vec![0.1, -0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = mh_sample_posterior(&c, &[0.0], &sigma_re, 1e6, tau(0.5), 20_000, 1.0, &mut rng).unwrap();
        let v0 = d.samples.iter().map(|u| u[0] * u[0]).sum::<f64>() / d.samples.len() as f64;
        assert!((v0 - 0.8).abs() < 0.1, "{v0}");
    }

    #[test]
    fn posterior_mean_matches_grid_oracle() {
        let c = one_cluster(Matrix::from_rows(&[&[1.0]]).unwrap(), vec![1.2]);
        let (sd, sigma, t) = (0.9, 0.5, tau(0.3));
        // trapezoid posterior mean on a dense grid
        let h = 1e-4;
        let (mut num, mut den) = (0.0, 0.0);
        let mut u = -8.0;
        while u <= 8.0 {
            let lp = al_log_density(1.2, &AlParams::new(u, sigma, t).unwrap()) - 0.5 * u * u / (sd * sd);
            num += u * lp.exp();
            den += lp.exp();
            u += h;
        }
        let oracle = num / den;

        let sigma_re = Matrix::from_rows(&[&[sd * sd]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = mh_sample_posterior(&c, &[0.0], &sigma_re, sigma, t, 200_000, 1.0, &mut rng).unwrap();
        let mean = d.samples.iter().map(|u| u[0]).sum::<f64>() / d.samples.len() as f64;
        assert!((mean - oracle).abs() < 0.02, "{mean} vs {oracle}");
    }

    #[test]
    fn one_iteration_sigma_is_plug_in_mean() {
        let config = ScenarioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (data, _) = generate_dataset(&config, 40, tau(0.5), &mut rng).unwrap();
        let clusters = data
            .clusters()
            .iter()
            .map(|c| ClusterData {
                z: Matrix::zeros(c.len(), 2),
                ..c.clone()
            })
            .collect();
        let data = LongitudinalDataset::new(clusters).unwrap();
        let control = SaemControl {
            max_iter: 1,
            mc_samples: 50,
            ..Default::default()
        };
        let fit = fit_saem(&data, tau(0.5), &control).unwrap();
        let plug_in = data
            .observations()
            .map(|(y, x)| check_loss(y - dot(x, fit.fit.beta.as_slice()), 0.5))
            .sum::<f64>()
            / data.n_obs() as f64;
        assert!((fit.fit.sigma - plug_in).abs() < 1e-6 * plug_in, "{} {plug_in}", fit.fit.sigma);
    }

    #[test]
    fn deterministic_and_sane_on_simulated_data() {
        let config = ScenarioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (data, _) = generate_dataset(&config, 50, tau(0.5), &mut rng).unwrap();
        let control = SaemControl {
            max_iter: 60,
            seed: 3,
            ..Default::default()
        };
        let a = fit_saem(&data, tau(0.5), &control).unwrap();
        let b = fit_saem(&data, tau(0.5), &control).unwrap();
        assert_eq!(a, b);
        assert!(a.acceptance_rate > 0.05 && a.acceptance_rate < 0.95, "{}", a.acceptance_rate);
        assert!(cholesky(&a.fit.sigma_matrix()).is_ok());
        assert!(!a.fit.converged || a.fit.iterations >= 3);
    }

    #[test]
    fn rejects_bad_control() {
        let config = ScenarioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (data, _) = generate_dataset(&config, 10, tau(0.5), &mut rng).unwrap();
        let control = SaemControl {
            memory_cutpoint: 1.0,
            ..Default::default()
        };
        assert!(fit_saem(&data, tau(0.5), &control).is_err());
    }
}
