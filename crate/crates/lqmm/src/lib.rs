//! Linear quantile mixed models: the `std` side of the toolkit.
//!
//! [`lqmm_core`] holds the estimators; this crate adds what needs an
//! operating system — CSV input, wall-clock timing, thread-pool drivers for
//! the cluster bootstrap and the simulation benchmark, report files, and the
//! `lqmm` command-line program.

pub mod bench;
pub mod bootstrap;
pub mod error;
pub mod fit;
pub mod input;
pub mod report;

pub use error::{Error, Result};
pub use lqmm_core as core;
