//! Estimation core for linear quantile mixed models (LQMM).
//!
//! The conditional τ-quantile of a clustered response is modelled as
//! `x_ijᵀβ + z_ijᵀu_i`, with an asymmetric Laplace working likelihood and
//! normal random effects integrated out by tensor-product Gauss–Hermite
//! quadrature. The integrated log-likelihood is maximized with a
//! derivative-free simplex search; a stochastic-approximation EM estimator is
//! provided as a comparator, together with the simulation design used to
//! benchmark the two.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, timing, the CLI
//! and parallel drivers live in the `lqmm` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod covariance;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod quadrature;
pub mod saem;
pub mod seed;
pub mod simulate;

pub use covariance::{CovarianceKind, CovarianceParams, CovarianceStructure};
pub use error::{Error, Result};
pub use estimation::{fit_lqmm, predict, start_values, FitControl, FitResult, StartValues};
pub use linalg::Matrix;
pub use model::{
    al_log_density, al_sample, check_function, linear_predictor, AlParams, ClusterData,
    FixedEffects, LongitudinalDataset, QuantileLevel,
};
pub use quadrature::{hermite_rule, integrated_loglik, tensor_grid, HermiteRule, TensorGrid};
pub use saem::{fit_saem, SaemControl, SaemFit};
pub use simulate::{generate_dataset, ScenarioConfig, Truth};
