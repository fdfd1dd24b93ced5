//! Bias and RMSE summaries of repeated estimates against a known truth.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub n: usize,
    pub mean: f64,
    /// `mean(θ̂ − θ)`.
    pub bias: f64,
    /// `sqrt(mean((θ̂ − θ)²))`.
    pub rmse: f64,
    /// Population variance of the estimates, so that `rmse² = bias² + variance`.
    pub variance: f64,
}

impl ErrorSummary {
    /// Summary of `estimates` against `truth`; NaN fields when empty.
    pub fn new(estimates: &[f64], truth: f64) -> Self {
        let n = estimates.len();
        if n == 0 {
            return ErrorSummary {
                n,
                mean: f64::NAN,
                bias: f64::NAN,
                rmse: f64::NAN,
                variance: f64::NAN,
            };
        }
        let nf = n as f64;
        let mean = estimates.iter().sum::<f64>() / nf;
        let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / nf;
        let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / nf;
        ErrorSummary {
            n,
            mean,
            bias: mean - truth,
            rmse: mse.sqrt(),
            variance,
        }
    }
}
