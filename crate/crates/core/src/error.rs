use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A quantile level outside the open interval (0, 1).
    InvalidQuantile(f64),
    /// A scale parameter that is not strictly positive.
    NonPositiveScale(f64),
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    EmptyDataset,
    EmptyCluster(String),
    NotPositiveDefinite,
    NotSymmetric,
    /// The matrix has structure (e.g. off-diagonal mass) the covariance model cannot represent.
    StructureMismatch(&'static str),
    InvalidStructure(&'static str),
    ParameterLength {
        expected: usize,
        found: usize,
    },
    KnotsOutOfRange(usize),
    GridTooLarge {
        knots: usize,
        dim: usize,
    },
    RankDeficient,
    TooFewObservations {
        observations: usize,
        fixed_effects: usize,
    },
    TooManyParameters(usize),
    InvalidControl(&'static str),
    AllReplicatesFailed(usize),
    NonFinite(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidQuantile(t) => write!(f, "quantile level {t} is not in (0, 1)"),
            Error::NonPositiveScale(s) => write!(f, "scale {s} must be strictly positive"),
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, found {found}"),
            Error::EmptyDataset => write!(f, "dataset has no clusters"),
            Error::EmptyCluster(id) => write!(f, "cluster {id:?} has no observations"),
            Error::NotPositiveDefinite => write!(f, "matrix is not positive definite"),
            Error::NotSymmetric => write!(f, "matrix is not symmetric"),
            Error::StructureMismatch(s) => {
                write!(f, "matrix is incompatible with the covariance structure: {s}")
            }
            Error::InvalidStructure(s) => write!(f, "invalid covariance structure: {s}"),
            Error::ParameterLength { expected, found } => {
                write!(f, "expected {expected} covariance parameters, found {found}")
            }
            Error::KnotsOutOfRange(k) => {
                write!(f, "quadrature order {k} is outside the supported range 1..=25")
            }
            Error::GridTooLarge { knots, dim } => write!(
                f,
                "tensor grid with {knots} knots in {dim} dimensions exceeds 10^7 points"
            ),
            Error::RankDeficient => write!(f, "fixed-effects design matrix is rank deficient"),
            Error::TooFewObservations {
                observations,
                fixed_effects,
            } => write!(
                f,
                "{observations} observations are not enough for {fixed_effects} fixed effects"
            ),
            Error::TooManyParameters(n) => {
                write!(f, "{n} free parameters exceed the simplex search limit of 50")
            }
            Error::InvalidControl(s) => write!(f, "invalid control setting: {s}"),
            Error::AllReplicatesFailed(r) => {
                write!(f, "all {r} bootstrap replicates failed to converge")
            }
            Error::NonFinite(s) => write!(f, "non-finite value in {s}"),
        }
    }
}

impl core::error::Error for Error {}
