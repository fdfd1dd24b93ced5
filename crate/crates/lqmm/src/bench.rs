//! The simulation benchmark: generate every (M, τ, replication) dataset of a
//! design, fit it with each requested algorithm, and aggregate bias, RMSE,
//! convergence failures, timing and scaled log-likelihoods.
//!
//! Each replication draws from its own generator, seeded from the master seed
//! and the (M, τ, replication) triple, and results are gathered in job order,
//! so every number except wall-clock time is independent of the worker count.

use lqmm_core::metrics::ErrorSummary;
use lqmm_core::seed::derive_seed;
use lqmm_core::simulate::is_selected;
use lqmm_core::{
    generate_dataset, CovarianceKind, CovarianceStructure, FitControl, QuantileLevel,
    SaemControl, ScenarioConfig, Truth,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::thread_pool;
use crate::error::{Error, Result};
use crate::fit::{timed_fit, Algorithm};

/// Knots per dimension used by the benchmark's quadrature fits.
pub const BENCH_KNOTS: usize = 9;

/// Salt mixed into a replication seed to seed its SAEM sampler.
const SAEM_SEED_SALT: u64 = 0x5AE4;

/// A benchmark design: the simulation scenario plus the estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
    pub algorithms: Vec<Algorithm>,
    /// Covariance structure of the quadrature fits.
    pub covariance: CovarianceKind,
    pub fit: FitControl,
    pub saem: SaemControl,
    /// Run SAEM only on the first this-many replications of each scenario.
    pub saem_replications: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scenario: ScenarioConfig::default(),
            algorithms: vec![Algorithm::Quadrature],
            covariance: CovarianceKind::GeneralPd,
            fit: FitControl {
                knots: BENCH_KNOTS,
                start_from_quantreg: true,
                ..FitControl::default()
            },
            saem: SaemControl {
                knots: BENCH_KNOTS,
                ..SaemControl::default()
            },
            saem_replications: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.algorithms.is_empty() {
            return Err(Error::Input("at least one algorithm is required".into()));
        }
        if self.scenario.replications == 0 {
            return Err(Error::Input("at least one replication is required".into()));
        }
        if self.scenario.scenarios().is_empty() {
            return Err(Error::Input("the design has no (M, tau) scenarios".into()));
        }
        Ok(())
    }

    /// Names of the parameters entering bias and RMSE: β then σ.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.scenario.delta.len())
            .map(|k| format!("beta{k}"))
            .collect();
        names.push("sigma".to_string());
        names
    }

    fn replications_for(&self, algorithm: Algorithm) -> usize {
        match (algorithm, self.saem_replications) {
            (Algorithm::Saem, Some(r)) => r.min(self.scenario.replications),
            _ => self.scenario.replications,
        }
    }
}

/// One fit of one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub algorithm: Algorithm,
    pub clusters: usize,
    pub tau: f64,
    pub replication: usize,
    pub seed: u64,
    /// `(β, σ)` estimates; empty when the fit raised an error.
    pub estimates: Vec<f64>,
    /// `(β, σ)` truth.
    pub truth: Vec<f64>,
    /// Lower triangle of the estimated random-effects covariance, row by row.
    pub random_effects_covariance: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// ℓ_GQ at the estimates.
    pub loglik: f64,
    /// ℓ_GQ divided by the number of clusters.
    pub loglik_scaled: f64,
    pub elapsed_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    pub variance: f64,
}

/// Aggregates of one algorithm on one (M, τ) scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub algorithm: Algorithm,
    pub clusters: usize,
    pub tau: f64,
    pub fits: usize,
    pub failures: usize,
    pub failure_percent: f64,
    /// Over fits that produced estimates, converged or not.
    pub parameters: Vec<ParameterSummary>,
    /// Mean of ℓ_GQ / M.
    pub loglik_scaled: f64,
    pub total_seconds: f64,
    pub mean_seconds: f64,
}

/// Grand averages of one algorithm (one row of Table 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub fits: usize,
    /// Mean of the per-scenario, per-parameter biases.
    pub avg_bias: f64,
    /// Mean of their absolute values.
    pub avg_abs_bias: f64,
    pub avg_rmse: f64,
    pub total_seconds: f64,
    pub mean_seconds: f64,
    pub failures: usize,
    pub failure_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub config: BenchConfig,
    /// Whether grand averages cover the selected scenarios (M ∈ {50, 300},
    /// τ ∈ {0.05, 0.5, 0.95}) or, when the design has none of them, all.
    pub grand_average_scope: String,
    pub records: Vec<ReplicationRecord>,
    pub scenarios: Vec<ScenarioSummary>,
    pub algorithms: Vec<AlgorithmSummary>,
    /// Worker threads used.
    pub workers: usize,
}

struct Job {
    clusters: usize,
    tau: f64,
    tau_index: usize,
    replication: usize,
}

fn truth_vector(truth: &Truth) -> Vec<f64> {
    let mut v = truth.beta.clone();
    v.push(truth.sigma);
    v
}

fn run_job(config: &BenchConfig, job: &Job) -> Result<Vec<ReplicationRecord>> {
    let seed = config
        .scenario
        .replication_seed(job.clusters, job.tau_index, job.replication);
    let tau = QuantileLevel::new(job.tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (data, truth) = generate_dataset(&config.scenario, job.clusters, tau, &mut rng)?;
    let truth = truth_vector(&truth);
    let structure = CovarianceStructure::new(config.covariance, data.q())?;
    let saem = SaemControl {
        seed: derive_seed(seed, &[SAEM_SEED_SALT]),
        ..config.saem.clone()
    };
    let mut out = Vec::new();
    for &algorithm in &config.algorithms {
        if job.replication >= config.replications_for(algorithm) {
            continue;
        }
        let base = ReplicationRecord {
            algorithm,
            clusters: job.clusters,
            tau: job.tau,
            replication: job.replication,
            seed,
            estimates: Vec::new(),
            truth: truth.clone(),
            random_effects_covariance: Vec::new(),
            converged: false,
            iterations: 0,
            loglik: f64::NAN,
            loglik_scaled: f64::NAN,
            elapsed_seconds: 0.0,
            error: None,
        };
        let record = match timed_fit(&data, tau, algorithm, structure, &config.fit, &saem) {
            Ok(timed) => {
                let fit = timed.fit;
                let mut estimates = fit.beta.0.clone();
                estimates.push(fit.sigma);
                let s = fit.sigma_matrix();
                let lower = (0..s.rows())
                    .flat_map(|i| (0..=i).map(move |j| (i, j)))
                    .map(|(i, j)| s[(i, j)])
                    .collect();
                ReplicationRecord {
                    estimates,
                    random_effects_covariance: lower,
                    converged: fit.converged,
                    iterations: fit.iterations,
                    loglik: fit.loglik,
                    loglik_scaled: fit.loglik / job.clusters as f64,
                    elapsed_seconds: fit.elapsed_seconds,
                    ..base
                }
            }
            Err(e) => ReplicationRecord {
                error: Some(e.to_string()),
                ..base
            },
        };
        out.push(record);
    }
    Ok(out)
}

fn summarize_scenario(
    algorithm: Algorithm,
    clusters: usize,
    tau: f64,
    records: &[&ReplicationRecord],
    names: &[String],
) -> ScenarioSummary {
    let fits = records.len();
    let failures = records.iter().filter(|r| !r.converged).count();
    let ok: Vec<&&ReplicationRecord> = records.iter().filter(|r| !r.estimates.is_empty()).collect();
    let parameters = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let truth = records.first().map_or(f64::NAN, |r| r.truth[k]);
            let est: Vec<f64> = ok.iter().map(|r| r.estimates[k]).collect();
            let e = ErrorSummary::new(&est, truth);
            ParameterSummary {
                name: name.clone(),
                truth,
                mean: e.mean,
                bias: e.bias,
                rmse: e.rmse,
                variance: e.variance,
            }
        })
        .collect();
    let total_seconds: f64 = records.iter().map(|r| r.elapsed_seconds).sum();
    ScenarioSummary {
        algorithm,
        clusters,
        tau,
        fits,
        failures,
        failure_percent: percent(failures, fits),
        parameters,
        loglik_scaled: mean(ok.iter().map(|r| r.loglik_scaled)),
        total_seconds,
        mean_seconds: total_seconds / fits.max(1) as f64,
    }
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn summarize_algorithm(
    algorithm: Algorithm,
    scenarios: &[&ScenarioSummary],
) -> AlgorithmSummary {
    let params = || scenarios.iter().flat_map(|s| s.parameters.iter());
    let fits: usize = scenarios.iter().map(|s| s.fits).sum();
    let failures: usize = scenarios.iter().map(|s| s.failures).sum();
    let total_seconds: f64 = scenarios.iter().map(|s| s.total_seconds).sum();
    AlgorithmSummary {
        algorithm,
        fits,
        avg_bias: mean(params().map(|p| p.bias)),
        avg_abs_bias: mean(params().map(|p| p.bias.abs())),
        avg_rmse: mean(params().map(|p| p.rmse)),
        total_seconds,
        mean_seconds: total_seconds / fits.max(1) as f64,
        failures,
        failure_percent: percent(failures, fits),
    }
}

/// Builds scenario and algorithm aggregates from replication records listed
/// in (M, τ, replication, algorithm) order.
pub fn aggregate(config: &BenchConfig, records: Vec<ReplicationRecord>, workers: usize) -> ScenarioReport {
    let names = config.parameter_names();
    let scenario_list = config.scenario.scenarios();
    let mut scenarios = Vec::new();
    for &algorithm in &config.algorithms {
        for &(m, tau) in &scenario_list {
            let rs: Vec<&ReplicationRecord> = records
                .iter()
                .filter(|r| r.algorithm == algorithm && r.clusters == m && r.tau == tau)
                .collect();
            if !rs.is_empty() {
                scenarios.push(summarize_scenario(algorithm, m, tau, &rs, &names));
            }
        }
    }
    let any_selected = scenario_list.iter().any(|&(m, t)| is_selected(m, t));
    let algorithms = config
        .algorithms
        .iter()
        .map(|&a| {
            let scope: Vec<&ScenarioSummary> = scenarios
                .iter()
                .filter(|s| s.algorithm == a && (!any_selected || is_selected(s.clusters, s.tau)))
                .collect();
            summarize_algorithm(a, &scope)
        })
        .collect();
    ScenarioReport {
        config: config.clone(),
        grand_average_scope: if any_selected { "selected" } else { "all" }.to_string(),
        records,
        scenarios,
        algorithms,
        workers,
    }
}

/// Runs the whole design on `workers` threads (0 = one per core).
pub fn run_benchmark(config: &BenchConfig, workers: usize) -> Result<ScenarioReport> {
    config.validate()?;
    let mut jobs = Vec::new();
    for (m, tau) in config.scenario.scenarios() {
        let tau_index = config
            .scenario
            .taus
            .iter()
            .position(|&t| t == tau)
            .expect("scenario taus come from the config");
        for replication in 0..config.scenario.replications {
            jobs.push(Job {
                clusters: m,
                tau,
                tau_index,
                replication,
            });
        }
    }
    let pool = thread_pool(workers)?;
    let used = pool.current_num_threads();
    let results = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(config, job))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(aggregate(config, results.into_iter().flatten().collect(), used))
}
