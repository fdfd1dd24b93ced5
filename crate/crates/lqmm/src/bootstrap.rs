//! Cluster bootstrap on a thread pool.
//!
//! Replicate `r` resamples with its own generator seeded by `seed + r`, so the
//! replicate fits do not depend on scheduling; they are collected in index
//! order before summarizing, which makes the result independent of the number
//! of worker threads.

use lqmm_core::estimation::{bootstrap_replicate, summarize_bootstrap, BootstrapOptions, BootstrapSummary};
use lqmm_core::{FitControl, FitResult, LongitudinalDataset};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Builds a pool with `workers` threads (0 = rayon's default).
pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Input(format!("cannot start worker pool: {e}")))
}

/// Runs all replicates and returns their fits in replicate order.
pub fn bootstrap_fits(
    data: &LongitudinalDataset,
    fit: &FitResult,
    control: &FitControl,
    options: &BootstrapOptions,
    pool: &rayon::ThreadPool,
) -> Result<Vec<FitResult>> {
    if options.replicates < 2 {
        return Err(lqmm_core::Error::InvalidControl("at least two bootstrap replicates are needed").into());
    }
    let fits = pool.install(|| {
        (0..options.replicates)
            .into_par_iter()
            .map(|r| bootstrap_replicate(data, fit, control, options, r))
            .collect::<lqmm_core::Result<Vec<_>>>()
    })?;
    Ok(fits)
}

/// Parallel equivalent of [`lqmm_core::estimation::cluster_bootstrap`].
pub fn cluster_bootstrap(
    data: &LongitudinalDataset,
    fit: &FitResult,
    control: &FitControl,
    options: &BootstrapOptions,
    pool: &rayon::ThreadPool,
) -> Result<BootstrapSummary> {
    let fits = bootstrap_fits(data, fit, control, options, pool)?;
    Ok(summarize_bootstrap(&fits)?)
}
