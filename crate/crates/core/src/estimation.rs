//! Fitting: starting values, maximization of the quadrature log-likelihood,
//! cluster bootstrap and prediction.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceParams, CovarianceStructure};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, dot, Matrix};
use crate::model::{
    check_loss, linear_predictor, ClusterData, FixedEffects, LongitudinalDataset, QuantileLevel,
};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::quadrature::{hermite_rule, tensor_grid, QuadratureLoglik};

/// Lower guard for the AL scale.
pub const SIGMA_FLOOR: f64 = 1e-6;
const MAX_FREE_PARAMETERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitControl {
    pub max_iter: usize,
    pub loglik_tol: f64,
    pub start_from_quantreg: bool,
    pub knots: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Record the best objective value after every simplex iteration.
    pub record_trace: bool,
}

impl Default for FitControl {
    fn default() -> Self {
        FitControl {
            max_iter: 2000,
            loglik_tol: 1e-3,
            start_from_quantreg: true,
            knots: 7,
            restarts: 1,
            seed: 0,
            record_trace: false,
        }
    }
}

impl FitControl {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidControl("max_iter must be at least 1"));
        }
        if !(self.loglik_tol > 0.0) {
            return Err(Error::InvalidControl("loglik_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartValues {
    pub beta: FixedEffects,
    pub cov: CovarianceParams,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub tau: QuantileLevel,
    pub beta: FixedEffects,
    pub cov: CovarianceParams,
    pub sigma: f64,
    /// Log-likelihood at the estimates, on the quadrature yardstick.
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Wall time of the fit. Zero unless filled in by a caller with a clock.
    pub elapsed_seconds: f64,
    /// Best objective (−ℓ) after each iteration, when tracing was requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

impl FitResult {
    pub fn sigma_matrix(&self) -> Matrix {
        self.cov.to_matrix()
    }

    /// `(β, θ, σ)` concatenated; the layout used for bootstrap standard errors.
    pub fn parameter_vector(&self) -> Vec<f64> {
        let mut v = self.beta.0.clone();
        v.extend_from_slice(self.cov.theta());
        v.push(self.sigma);
        v
    }

    /// True when the two fits agree in everything except wall time.
    pub fn same_estimates(&self, other: &FitResult) -> bool {
        FitResult {
            elapsed_seconds: 0.0,
            ..self.clone()
        } == FitResult {
            elapsed_seconds: 0.0,
            ..other.clone()
        }
    }

    pub fn start_values(&self) -> StartValues {
        StartValues {
            beta: self.beta.clone(),
            cov: self.cov.clone(),
            sigma: self.sigma,
        }
    }
}

fn least_squares(data: &LongitudinalDataset) -> Result<Vec<f64>> {
    let p = data.p();
    let mut xtx = Matrix::zeros(p, p);
    let mut xty = vec![0.0; p];
    for (y, x) in data.observations() {
        for a in 0..p {
            xty[a] += x[a] * y;
            for b in 0..p {
                xtx[(a, b)] += x[a] * x[b];
            }
        }
    }
    let scale = (0..p).fold(0.0f64, |m, i| m.max(xtx[(i, i)]));
    let l = cholesky(&xtx).map_err(|_| Error::RankDeficient)?;
    // a tiny pivot relative to the largest diagonal entry means collinear columns
    if (0..p).any(|i| l[(i, i)] * l[(i, i)] <= 1e-12 * scale) {
        return Err(Error::RankDeficient);
    }
    Ok(cholesky_solve(&l, &xty))
}

fn check_loss_total(data: &LongitudinalDataset, beta: &[f64], tau: f64) -> f64 {
    data.observations()
        .map(|(y, x)| check_loss(y - dot(x, beta), tau))
        .sum()
}

/// Minimizes the fixed-effects-only check loss by simplex search seeded at
/// `beta0`.
pub(crate) fn quantile_regression(
    data: &LongitudinalDataset,
    tau: f64,
    beta0: &[f64],
    scale: f64,
) -> Vec<f64> {
    let steps: Vec<f64> = beta0.iter().map(|b| 0.1 * (b.abs() + scale)).collect();
    let f0 = check_loss_total(data, beta0, tau);
    let opts = NelderMeadOptions {
        max_iter: 5000,
        f_tol: 1e-10 * (1.0 + f0),
        stall_window: 0,
        restarts: 3,
        record_trace: false,
    };
    nelder_mead(|b| check_loss_total(data, b, tau), beta0, &steps, &opts).x
}

/// Root-mean-square residual of `beta`: the unit in which the optimizer
/// measures the response, which makes the fit equivariant under rescaling y.
/// Falls back to the root mean square of y (or 1) when the residuals vanish.
fn response_scale(data: &LongitudinalDataset, beta: &[f64]) -> f64 {
    let n = data.n_obs() as f64;
    let mean_square = |f: &dyn Fn(f64, &[f64]) -> f64| {
        (data.observations().map(|(y, x)| f(y, x).powi(2)).sum::<f64>() / n).sqrt()
    };
    let rms = mean_square(&|y, x| y - dot(x, beta));
    let rms_y = mean_square(&|y, _| y);
    let s = if rms > 1e-8 * rms_y { rms } else { rms_y };
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Starting values: least squares or check-loss β, σ as the mean check loss
/// of the residuals, and unit variances with zero correlations on the scale
/// of the residuals, i.e. Σ = s²I with s their root mean square.
pub fn start_values(
    data: &LongitudinalDataset,
    tau: QuantileLevel,
    structure: CovarianceStructure,
    from_quantreg: bool,
) -> Result<StartValues> {
    let (n, p) = (data.n_obs(), data.p());
    if n <= p {
        return Err(Error::TooFewObservations {
            observations: n,
            fixed_effects: p,
        });
    }
    if structure.q() != data.q() {
        return Err(Error::DimensionMismatch {
            what: "covariance dimension",
            expected: data.q(),
            found: structure.q(),
        });
    }
    let t = tau.value();
    let mut beta = least_squares(data)?;
    if from_quantreg {
        let ys: Vec<f64> = data.observations().map(|(y, _)| y).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        beta = quantile_regression(data, t, &beta, sd.max(1e-8));
    }
    let sigma = (check_loss_total(data, &beta, t) / n as f64).max(SIGMA_FLOOR);
    let s = response_scale(data, &beta);
    let cov = CovarianceParams::from_matrix(&Matrix::identity(structure.q()).scale(s * s), structure)?;
    Ok(StartValues {
        beta: FixedEffects(beta),
        cov,
        sigma,
    })
}

/// Maximizes the integrated log-likelihood from data-driven start values.
pub fn fit_lqmm(
    data: &LongitudinalDataset,
    tau: QuantileLevel,
    structure: CovarianceStructure,
    control: &FitControl,
) -> Result<FitResult> {
    control.validate()?;
    let start = start_values(data, tau, structure, control.start_from_quantreg)?;
    fit_lqmm_from(data, tau, &start, control)
}

/// Maximizes the integrated log-likelihood over `(β, θ, log σ)` by simplex
/// search from `start`.
pub fn fit_lqmm_from(
    data: &LongitudinalDataset,
    tau: QuantileLevel,
    start: &StartValues,
    control: &FitControl,
) -> Result<FitResult> {
    control.validate()?;
    let structure = start.cov.structure();
    let (p, m) = (data.p(), structure.n_params());
    let n_free = p + m + 1;
    if n_free > MAX_FREE_PARAMETERS {
        return Err(Error::TooManyParameters(n_free));
    }
    if start.beta.len() != p {
        return Err(Error::DimensionMismatch {
            what: "fixed effects",
            expected: p,
            found: start.beta.len(),
        });
    }
    if structure.q() != data.q() {
        return Err(Error::DimensionMismatch {
            what: "covariance dimension",
            expected: data.q(),
            found: structure.q(),
        });
    }
    // Optimize on y / s; then ℓ(y) = ℓ(y / s) − N·ln s.
    let s = response_scale(data, &start.beta.0);
    let scaled = data.map_response(|y| y / s);
    let shift = data.n_obs() as f64 * s.ln();
    let grid = tensor_grid(&hermite_rule(control.knots)?, data.q())?;
    let ll = QuadratureLoglik::new(&scaled, tau, &grid)?;

    let unpack = |x: &[f64]| -> (CovarianceParams, f64) {
        let cov = CovarianceParams::new(structure, x[p..p + m].to_vec()).expect("length checked");
        (cov, x[p + m].exp().max(SIGMA_FLOOR))
    };
    let objective = |x: &[f64]| {
        let (cov, sigma) = unpack(x);
        -ll.eval(&x[..p], cov.cholesky_factor().as_slice(), sigma)
    };

    let sigma0 = (start.sigma / s).max(SIGMA_FLOOR);
    let cov0 = CovarianceParams::from_matrix(&start.cov.to_matrix().scale(1.0 / (s * s)), structure)?;
    let mut x0: Vec<f64> = start.beta.0.iter().map(|b| b / s).collect();
    x0.extend_from_slice(cov0.theta());
    x0.push(sigma0.ln());
    let mut steps: Vec<f64> = x0[..p].iter().map(|b| 0.1 * (b.abs() + sigma0)).collect();
    steps.extend(core::iter::repeat(0.3).take(m));
    steps.push(0.2);

    let opts = NelderMeadOptions {
        max_iter: control.max_iter,
        f_tol: control.loglik_tol,
        stall_window: 0,
        restarts: control.restarts,
        record_trace: control.record_trace,
    };
    let found = nelder_mead(objective, &x0, &steps, &opts);
    let (cov, sigma) = unpack(&found.x);
    let cov = CovarianceParams::from_matrix(&cov.to_matrix().scale(s * s), structure)?;
    Ok(FitResult {
        tau,
        beta: FixedEffects(found.x[..p].iter().map(|b| b * s).collect()),
        cov,
        sigma: sigma * s,
        loglik: -found.f - shift,
        converged: found.converged && found.f.is_finite(),
        iterations: found.iterations,
        evaluations: found.evaluations,
        elapsed_seconds: 0.0,
        trace: found.trace.iter().map(|f| f + shift).collect(),
    })
}

/// Conditional τ-quantile predictions; `u = None` gives population-level
/// predictions.
pub fn predict(fit: &FitResult, cluster: &ClusterData, u: Option<&[f64]>) -> Result<Vec<f64>> {
    let zeros = vec![0.0; cluster.z.cols()];
    linear_predictor(cluster, &fit.beta, u.unwrap_or(&zeros))
}

/// Draws M clusters with replacement.
pub fn resample_clusters<R: Rng + ?Sized>(
    data: &LongitudinalDataset,
    rng: &mut R,
) -> LongitudinalDataset {
    let m = data.n_clusters();
    let clusters = (0..m)
        .map(|_| data.clusters()[rng.random_range(0..m)].clone())
        .collect();
    LongitudinalDataset::new(clusters).expect("resampling preserves dimensions")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Start each replicate from the full-data fit rather than from fresh
    /// start values.
    pub warm_start: bool,
}

/// One bootstrap replicate: resample with the RNG seeded by `seed + index`
/// and refit.
pub fn bootstrap_replicate(
    data: &LongitudinalDataset,
    fit: &FitResult,
    control: &FitControl,
    options: &BootstrapOptions,
    index: usize,
) -> Result<FitResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(index as u64));
    let sample = resample_clusters(data, &mut rng);
    let start = if options.warm_start {
        fit.start_values()
    } else {
        start_values(
            &sample,
            fit.tau,
            fit.cov.structure(),
            control.start_from_quantreg,
        )?
    };
    let control = FitControl {
        record_trace: false,
        ..control.clone()
    };
    fit_lqmm_from(&sample, fit.tau, &start, &control)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    /// Standard errors for `(β, θ, σ)` over converged replicates.
    pub standard_errors: Vec<f64>,
    pub converged: Vec<bool>,
    pub failures: usize,
}

/// Sample standard deviations over the converged replicates.
pub fn summarize_bootstrap(replicates: &[FitResult]) -> Result<BootstrapSummary> {
    let converged: Vec<bool> = replicates.iter().map(|f| f.converged).collect();
    let ok: Vec<Vec<f64>> = replicates
        .iter()
        .filter(|f| f.converged)
        .map(FitResult::parameter_vector)
        .collect();
    if ok.is_empty() {
        return Err(Error::AllReplicatesFailed(replicates.len()));
    }
    let k = ok[0].len();
    let n = ok.len() as f64;
    let standard_errors = (0..k)
        .map(|j| {
            if ok.len() < 2 {
                return f64::NAN;
            }
            let mean = ok.iter().map(|v| v[j]).sum::<f64>() / n;
            (ok.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect();
    Ok(BootstrapSummary {
        standard_errors,
        failures: converged.iter().filter(|c| !**c).count(),
        converged,
    })
}

/// Sequential cluster bootstrap.
pub fn cluster_bootstrap(
    data: &LongitudinalDataset,
    fit: &FitResult,
    control: &FitControl,
    options: &BootstrapOptions,
) -> Result<BootstrapSummary> {
    if options.replicates < 2 {
        return Err(Error::InvalidControl("at least two bootstrap replicates are needed"));
    }
    let fits = (0..options.replicates)
        .map(|r| bootstrap_replicate(data, fit, control, options, r))
        .collect::<Result<Vec<_>>>()?;
    summarize_bootstrap(&fits)
}
