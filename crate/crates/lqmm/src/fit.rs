//! Timed fits over a list of quantile levels, with optional bootstrap
//! standard errors, and their text/JSON reports.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use lqmm_core::estimation::BootstrapOptions;
use lqmm_core::{
    fit_lqmm, fit_saem, CovarianceKind, CovarianceStructure, FitControl, FitResult,
    LongitudinalDataset, QuantileLevel, SaemControl,
};
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_fits, thread_pool};
use crate::error::{Error, Result};
use crate::input::DesignNames;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Gauss–Hermite integrated likelihood maximized by Nelder–Mead.
    Quadrature,
    /// Stochastic-approximation EM comparator.
    Saem,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Quadrature => "quadrature",
            Algorithm::Saem => "saem",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quadrature" | "gq" => Ok(Algorithm::Quadrature),
            "saem" => Ok(Algorithm::Saem),
            other => Err(Error::Input(format!(
                "unknown algorithm {other:?} (expected quadrature or saem)"
            ))),
        }
    }
}

/// Sampler diagnostics of an SAEM fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaemDiagnostics {
    pub acceptance_rate: f64,
    pub pd_violations: usize,
}

/// A fit with its wall-clock time filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedFit {
    pub fit: FitResult,
    pub saem: Option<SaemDiagnostics>,
}

/// Fits one quantile level and times the estimator call alone.
///
/// SAEM always estimates an unstructured covariance, so `structure` only
/// matters for the quadrature algorithm; SAEM evaluates its final
/// log-likelihood with `control.knots`.
pub fn timed_fit(
    data: &LongitudinalDataset,
    tau: QuantileLevel,
    algorithm: Algorithm,
    structure: CovarianceStructure,
    control: &FitControl,
    saem: &SaemControl,
) -> Result<TimedFit> {
    let start = Instant::now();
    let (mut fit, diagnostics) = match algorithm {
        Algorithm::Quadrature => (fit_lqmm(data, tau, structure, control)?, None),
        Algorithm::Saem => {
            let s = fit_saem(
                data,
                tau,
                &SaemControl {
                    knots: control.knots,
                    ..saem.clone()
                },
            )?;
            let d = SaemDiagnostics {
                acceptance_rate: s.acceptance_rate,
                pd_violations: s.pd_violations,
            };
            (s.fit, Some(d))
        }
    };
    fit.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(TimedFit {
        fit,
        saem: diagnostics,
    })
}

/// Everything the `fit` command needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRequest {
    pub taus: Vec<QuantileLevel>,
    pub algorithm: Algorithm,
    pub covariance: CovarianceKind,
    pub control: FitControl,
    pub saem: SaemControl,
    /// Bootstrap replicates; `None` skips standard errors.
    pub bootstrap: Option<BootstrapOptions>,
    /// Worker threads for the bootstrap (0 = one per core).
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInfo {
    pub replicates: usize,
    pub failures: usize,
    pub seed: u64,
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub tau: f64,
    /// `(β, θ, σ)` in the order of the optimizer's parameter vector.
    pub estimates: Vec<Estimate>,
    /// Random-effects covariance matrix, row by row.
    pub random_effects_covariance: Vec<Vec<f64>>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub elapsed_seconds: f64,
    pub bootstrap: Option<BootstrapInfo>,
    pub saem: Option<SaemDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub algorithm: Algorithm,
    pub covariance: String,
    pub knots: usize,
    pub clusters: usize,
    pub observations: usize,
    pub dropped_rows: usize,
    pub fixed_effects: Vec<String>,
    pub random_effects: Vec<String>,
    pub fits: Vec<QuantileFit>,
}

fn parameter_names(names: &DesignNames, n_theta: usize) -> Vec<String> {
    let mut out = names.fixed.clone();
    out.extend((1..=n_theta).map(|k| format!("theta{k}")));
    out.push("sigma".to_string());
    out
}

/// Fits every requested quantile level in turn.
pub fn run_fit(
    data: &LongitudinalDataset,
    names: &DesignNames,
    dropped_rows: usize,
    request: &FitRequest,
) -> Result<FitReport> {
    if request.taus.is_empty() {
        return Err(Error::Input("no quantile levels given".into()));
    }
    if request.bootstrap.is_some() && request.algorithm == Algorithm::Saem {
        return Err(Error::Input(
            "bootstrap standard errors are only available for the quadrature algorithm".into(),
        ));
    }
    let kind = match request.algorithm {
        Algorithm::Quadrature => request.covariance,
        Algorithm::Saem => CovarianceKind::GeneralPd,
    };
    let structure = CovarianceStructure::new(kind, data.q())?;
    let pool = match request.bootstrap {
        Some(_) => Some(thread_pool(request.workers)?),
        None => None,
    };
    let mut fits = Vec::with_capacity(request.taus.len());
    for &tau in &request.taus {
        let timed = timed_fit(data, tau, request.algorithm, structure, &request.control, &request.saem)?;
        let fit = &timed.fit;
        let values = fit.parameter_vector();
        let mut errors = vec![None; values.len()];
        let mut boot_info = None;
        if let (Some(options), Some(pool)) = (&request.bootstrap, &pool) {
            let reps = bootstrap_fits(data, fit, &request.control, options, pool)?;
            let summary = lqmm_core::estimation::summarize_bootstrap(&reps)?;
            errors = summary.standard_errors.iter().map(|&s| Some(s).filter(|s| s.is_finite())).collect();
            boot_info = Some(BootstrapInfo {
                replicates: options.replicates,
                failures: summary.failures,
                seed: options.seed,
                warm_start: options.warm_start,
            });
        }
        let estimates = parameter_names(names, fit.cov.theta().len())
            .into_iter()
            .zip(values)
            .zip(errors)
            .map(|((name, value), std_error)| Estimate {
                name,
                value,
                std_error,
            })
            .collect();
        let sigma = fit.sigma_matrix();
        fits.push(QuantileFit {
            tau: tau.value(),
            estimates,
            random_effects_covariance: (0..sigma.rows()).map(|i| sigma.row(i).to_vec()).collect(),
            loglik: fit.loglik,
            converged: fit.converged,
            iterations: fit.iterations,
            evaluations: fit.evaluations,
            elapsed_seconds: fit.elapsed_seconds,
            bootstrap: boot_info,
            saem: timed.saem,
        });
    }
    Ok(FitReport {
        algorithm: request.algorithm,
        covariance: kind.name().to_string(),
        knots: request.control.knots,
        clusters: data.n_clusters(),
        observations: data.n_obs(),
        dropped_rows,
        fixed_effects: names.fixed.clone(),
        random_effects: names.random.clone(),
        fits,
    })
}

impl FitReport {
    /// Human-readable summary, one block per quantile level.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Linear quantile mixed model ({}; covariance {}; {} quadrature knots)",
            self.algorithm, self.covariance, self.knots
        );
        let _ = writeln!(
            s,
            "{} observations in {} clusters{}",
            self.observations,
            self.clusters,
            if self.dropped_rows > 0 {
                format!(" ({} incomplete rows dropped)", self.dropped_rows)
            } else {
                String::new()
            }
        );
        let _ = writeln!(s, "Random effects: {}", self.random_effects.join(", "));
        for f in &self.fits {
            let _ = writeln!(s);
            let _ = writeln!(s, "tau = {}", f.tau);
            let _ = writeln!(
                s,
                "  log-likelihood {:.4}  converged {}  iterations {}  time {:.3} s",
                f.loglik,
                if f.converged { "yes" } else { "NO" },
                f.iterations,
                f.elapsed_seconds
            );
            if let Some(b) = &f.bootstrap {
                let _ = writeln!(
                    s,
                    "  bootstrap: {} replicates, {} not converged, seed {}",
                    b.replicates, b.failures, b.seed
                );
            }
            if let Some(d) = &f.saem {
                let _ = writeln!(
                    s,
                    "  SAEM: acceptance rate {:.3}, covariance repairs {}",
                    d.acceptance_rate, d.pd_violations
                );
            }
            let width = f.estimates.iter().map(|e| e.name.len()).max().unwrap_or(0).max(9);
            let _ = writeln!(s, "  {:<width$}  {:>12}  {:>12}", "parameter", "estimate", "std. error");
            for e in &f.estimates {
                let se = e.std_error.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
                let _ = writeln!(s, "  {:<width$}  {:>12.6}  {:>12}", e.name, e.value, se);
            }
            let _ = writeln!(s, "  random-effects covariance:");
            for row in &f.random_effects_covariance {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.6}")).collect();
                let _ = writeln!(s, "  {}", cells.join(""));
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lqmm_core::{ClusterData, Matrix};

    fn data() -> (LongitudinalDataset, DesignNames) {
        let clusters = (0..12)
            .map(|i| {
                let u = ((i * 7) % 5) as f64 * 0.3 - 0.6;
                let y: Vec<f64> = (0..4).map(|j| 1.0 + 0.5 * j as f64 + u + 0.1 * ((i + j) % 3) as f64).collect();
                let x = Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 3.0]]).unwrap();
                let z = Matrix::from_row_major(4, 1, vec![1.0; 4]).unwrap();
                ClusterData::new(format!("{i}"), y, x, z).unwrap()
            })
            .collect();
        (
            LongitudinalDataset::new(clusters).unwrap(),
            DesignNames {
                fixed: vec!["(Intercept)".into(), "time".into()],
                random: vec!["(Intercept)".into()],
            },
        )
    }

    fn request() -> FitRequest {
        FitRequest {
            taus: vec![QuantileLevel::new(0.5).unwrap(), QuantileLevel::new(0.75).unwrap()],
            algorithm: Algorithm::Quadrature,
            covariance: CovarianceKind::Diagonal,
            control: FitControl::default(),
            saem: SaemControl::default(),
            bootstrap: Some(BootstrapOptions {
                replicates: 5,
                seed: 3,
                warm_start: true,
            }),
            workers: 2,
        }
    }

    #[test]
    fn report_names_every_parameter() {
        let (d, names) = data();
        let report = run_fit(&d, &names, 0, &request()).unwrap();
        assert_eq!(report.fits.len(), 2);
        let names: Vec<&str> = report.fits[0].estimates.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["(Intercept)", "time", "theta1", "sigma"]);
        assert!(report.fits[0].estimates.iter().all(|e| e.std_error.is_some()));
        let text = report.to_text();
        assert!(text.contains("tau = 0.75"));
        let back: FitReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back.fits[1].estimates, report.fits[1].estimates);
    }

    #[test]
    fn bootstrap_does_not_depend_on_worker_count() {
        let (d, names) = data();
        let mut r = request();
        r.workers = 1;
        let a = run_fit(&d, &names, 0, &r).unwrap();
        r.workers = 3;
        let b = run_fit(&d, &names, 0, &r).unwrap();
        for (fa, fb) in a.fits.iter().zip(&b.fits) {
            assert_eq!(fa.estimates, fb.estimates);
        }
    }

    #[test]
    fn saem_rejects_bootstrap_but_fits_alone() {
        let (d, names) = data();
        let mut r = request();
        r.algorithm = Algorithm::Saem;
        assert!(run_fit(&d, &names, 0, &r).is_err());
        r.bootstrap = None;
        r.saem.max_iter = 60;
        let report = run_fit(&d, &names, 0, &r).unwrap();
        assert_eq!(report.covariance, "pdsymm");
        assert!(report.fits[0].saem.is_some());
    }

    #[test]
    fn parses_algorithm_names() {
        assert_eq!("SAEM".parse::<Algorithm>().unwrap(), Algorithm::Saem);
        assert!("em".parse::<Algorithm>().is_err());
    }
}
