//! Unconstrained parameterizations of the random-effects covariance Σ_τ.
//!
//! | kind                | θ                                                      | m          |
//! |---------------------|--------------------------------------------------------|------------|
//! | `GeneralPd`         | log-Cholesky: `log L_ii` on the diagonal, raw `L_ij` below, row-major | q(q+1)/2 |
//! | `Diagonal`          | log standard deviations                                | q          |
//! | `Identity`          | one log standard deviation                             | 1          |
//! | `CompoundSymmetric` | `(log s, z)`, common correlation from `tanh(z)`        | 2          |
//!
//! Every finite θ maps to a symmetric positive-definite matrix.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, Matrix};

/// Tolerance used when checking that a matrix has the zero / equal entries a
/// structure requires.
const STRUCTURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[serde(rename = "pdsymm")]
    GeneralPd,
    #[serde(rename = "pddiag")]
    Diagonal,
    #[serde(rename = "pdident")]
    Identity,
    #[serde(rename = "pdcompsymm")]
    CompoundSymmetric,
}

impl CovarianceKind {
    pub fn name(self) -> &'static str {
        match self {
            CovarianceKind::GeneralPd => "pdsymm",
            CovarianceKind::Diagonal => "pddiag",
            CovarianceKind::Identity => "pdident",
            CovarianceKind::CompoundSymmetric => "pdcompsymm",
        }
    }
}

impl Default for CovarianceKind {
    fn default() -> Self {
        CovarianceKind::Diagonal
    }
}

impl fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdsymm" => Ok(CovarianceKind::GeneralPd),
            "pddiag" => Ok(CovarianceKind::Diagonal),
            "pdident" => Ok(CovarianceKind::Identity),
            "pdcompsymm" => Ok(CovarianceKind::CompoundSymmetric),
            _ => Err(Error::InvalidStructure(
                "expected one of pdsymm, pddiag, pdident, pdcompsymm",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovarianceStructure {
    kind: CovarianceKind,
    q: usize,
}

impl CovarianceStructure {
    pub fn new(kind: CovarianceKind, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidStructure("q must be at least 1"));
        }
        if kind == CovarianceKind::CompoundSymmetric && q < 2 {
            return Err(Error::InvalidStructure(
                "compound symmetry needs at least two random effects",
            ));
        }
        Ok(CovarianceStructure { kind, q })
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Number of free parameters m.
    pub fn n_params(&self) -> usize {
        match self.kind {
            CovarianceKind::GeneralPd => self.q * (self.q + 1) / 2,
            CovarianceKind::Diagonal => self.q,
            CovarianceKind::Identity => 1,
            CovarianceKind::CompoundSymmetric => 2,
        }
    }

    /// Lower bound on the common correlation that keeps a q×q
    /// compound-symmetric matrix positive definite.
    fn min_correlation(&self) -> f64 {
        -1.0 / (self.q as f64 - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceParams {
    structure: CovarianceStructure,
    theta: Vec<f64>,
}

impl CovarianceParams {
    pub fn new(structure: CovarianceStructure, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != structure.n_params() {
            return Err(Error::ParameterLength {
                expected: structure.n_params(),
                found: theta.len(),
            });
        }
        Ok(CovarianceParams { structure, theta })
    }

    /// θ = 0: unit variances and zero correlations.
    pub fn unit(structure: CovarianceStructure) -> Self {
        CovarianceParams {
            structure,
            theta: alloc::vec![0.0; structure.n_params()],
        }
    }

    pub fn structure(&self) -> CovarianceStructure {
        self.structure
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Σ(θ).
    pub fn to_matrix(&self) -> Matrix {
        let q = self.structure.q;
        match self.structure.kind {
            CovarianceKind::GeneralPd => {
                let l = self.cholesky_factor();
                l.matmul(&l.transpose()).expect("square factor")
            }
            CovarianceKind::Diagonal => {
                let d: Vec<f64> = self.theta.iter().map(|t| (2.0 * t).exp()).collect();
                Matrix::from_diag(&d)
            }
            CovarianceKind::Identity => Matrix::identity(q).scale((2.0 * self.theta[0]).exp()),
            CovarianceKind::CompoundSymmetric => {
                let var = (2.0 * self.theta[0]).exp();
                let rho = self.correlation();
                let mut m = Matrix::zeros(q, q);
                for i in 0..q {
                    for j in 0..q {
                        m[(i, j)] = if i == j { var } else { var * rho };
                    }
                }
                m
            }
        }
    }

    /// Lower-triangular L with positive diagonal and `L Lᵀ = Σ(θ)`.
    pub fn cholesky_factor(&self) -> Matrix {
        let q = self.structure.q;
        match self.structure.kind {
            CovarianceKind::GeneralPd => {
                let mut l = Matrix::zeros(q, q);
                let mut k = 0;
                for i in 0..q {
                    for j in 0..=i {
                        l[(i, j)] = if i == j {
                            self.theta[k].exp()
                        } else {
                            self.theta[k]
                        };
                        k += 1;
                    }
                }
                l
            }
            CovarianceKind::Diagonal => {
                let d: Vec<f64> = self.theta.iter().map(|t| t.exp()).collect();
                Matrix::from_diag(&d)
            }
            CovarianceKind::Identity => Matrix::identity(q).scale(self.theta[0].exp()),
            CovarianceKind::CompoundSymmetric => {
                cholesky(&self.to_matrix()).expect("compound symmetry parameterization is PD")
            }
        }
    }

    fn correlation(&self) -> f64 {
        let t = self.theta[1].tanh();
        if self.structure.q == 2 {
            t
        } else {
            let lo = self.structure.min_correlation();
            lo + (1.0 - lo) * 0.5 * (t + 1.0)
        }
    }

    /// Inverse of [`to_matrix`](Self::to_matrix).
    pub fn from_matrix(sigma: &Matrix, structure: CovarianceStructure) -> Result<Self> {
        let q = structure.q;
        if sigma.rows() != q || sigma.cols() != q {
            return Err(Error::DimensionMismatch {
                what: "covariance matrix",
                expected: q,
                found: sigma.rows(),
            });
        }
        if !sigma.is_symmetric(1e-10) {
            return Err(Error::NotSymmetric);
        }
        let l = cholesky(sigma)?;
        let scale = (0..q).fold(0.0f64, |m, i| m.max(sigma[(i, i)]));
        let close = |a: f64, b: f64| (a - b).abs() <= STRUCTURE_TOL * (1.0 + scale);
        let theta = match structure.kind {
            CovarianceKind::GeneralPd => {
                let mut theta = Vec::with_capacity(structure.n_params());
                for i in 0..q {
                    for j in 0..=i {
                        theta.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
                    }
                }
                theta
            }
            CovarianceKind::Diagonal => {
                if !off_diagonal_all(sigma, |v| close(v, 0.0)) {
                    return Err(Error::StructureMismatch("off-diagonal entries must be zero"));
                }
                (0..q).map(|i| 0.5 * sigma[(i, i)].ln()).collect()
            }
            CovarianceKind::Identity => {
                if !off_diagonal_all(sigma, |v| close(v, 0.0)) {
                    return Err(Error::StructureMismatch("off-diagonal entries must be zero"));
                }
                let v0 = sigma[(0, 0)];
                if !(0..q).all(|i| close(sigma[(i, i)], v0)) {
                    return Err(Error::StructureMismatch("variances must be equal"));
                }
                alloc::vec![0.5 * v0.ln()]
            }
            CovarianceKind::CompoundSymmetric => {
                let v0 = sigma[(0, 0)];
                if !(0..q).all(|i| close(sigma[(i, i)], v0)) {
                    return Err(Error::StructureMismatch("variances must be equal"));
                }
                let c0 = sigma[(1, 0)];
                if !off_diagonal_all(sigma, |v| close(v, c0)) {
                    return Err(Error::StructureMismatch("covariances must be equal"));
                }
                let rho = c0 / v0;
                let t = if q == 2 {
                    rho
                } else {
                    let lo = structure.min_correlation();
                    2.0 * (rho - lo) / (1.0 - lo) - 1.0
                };
                alloc::vec![0.5 * v0.ln(), t.atanh()]
            }
        };
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("covariance parameters"));
        }
        CovarianceParams::new(structure, theta)
    }
}

fn off_diagonal_all(m: &Matrix, pred: impl Fn(f64) -> bool) -> bool {
    (0..m.rows()).all(|i| (0..m.cols()).all(|j| i == j || pred(m[(i, j)])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn st(kind: CovarianceKind, q: usize) -> CovarianceStructure {
        CovarianceStructure::new(kind, q).unwrap()
    }

    fn fixture() -> Matrix {
        Matrix::from_rows(&[&[0.8, 0.5], &[0.5, 1.0]]).unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(st(CovarianceKind::GeneralPd, 3).n_params(), 6);
        assert_eq!(st(CovarianceKind::Diagonal, 3).n_params(), 3);
        assert_eq!(st(CovarianceKind::Identity, 3).n_params(), 1);
        assert_eq!(st(CovarianceKind::CompoundSymmetric, 3).n_params(), 2);
        assert!(CovarianceStructure::new(CovarianceKind::CompoundSymmetric, 1).is_err());
        assert!(CovarianceStructure::new(CovarianceKind::Diagonal, 0).is_err());
    }

    #[test]
    fn zero_log_cholesky_is_identity() {
        let p = CovarianceParams::unit(st(CovarianceKind::GeneralPd, 2));
        assert_eq!(p.to_matrix(), Matrix::identity(2));
        assert_eq!(p.cholesky_factor(), Matrix::identity(2));
    }

    #[test]
    fn diagonal_uses_log_sd() {
        let p = CovarianceParams::new(st(CovarianceKind::Diagonal, 2), vec![0.0, 2f64.ln()]).unwrap();
        assert!(p.to_matrix().max_abs_diff(&Matrix::from_diag(&[1.0, 4.0])) < 1e-15);
    }

    #[test]
    fn from_matrix_examples() {
        let p = CovarianceParams::from_matrix(&Matrix::identity(2), st(CovarianceKind::GeneralPd, 2))
            .unwrap();
        assert_eq!(p.theta(), &[0.0, 0.0, 0.0]);
        let p = CovarianceParams::from_matrix(
            &Matrix::from_diag(&[0.04, 0.04]),
            st(CovarianceKind::Identity, 2),
        )
        .unwrap();
        assert!((p.theta()[0] - 0.2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn fixture_round_trips() {
        let s = fixture();
        let p = CovarianceParams::from_matrix(&s, st(CovarianceKind::GeneralPd, 2)).unwrap();
        assert!(p.to_matrix().max_abs_diff(&s) < 1e-12);
        // L = [[√0.8, 0], [0.5/√0.8, √(1 − 0.25/0.8)]]
        let l = p.cholesky_factor();
        assert!((l[(0, 0)] - 0.8f64.sqrt()).abs() < 1e-15);
        assert!((l[(1, 0)] - 0.5 / 0.8f64.sqrt()).abs() < 1e-15);
        assert!((l[(1, 1)] - (1.0 - 0.25 / 0.8f64).sqrt()).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn cholesky_factor_of_diagonal() {
        let p = CovarianceParams::from_matrix(
            &Matrix::from_diag(&[4.0, 9.0]),
            st(CovarianceKind::Diagonal, 2),
        )
        .unwrap();
        assert!(p.cholesky_factor().max_abs_diff(&Matrix::from_diag(&[2.0, 3.0])) < 1e-14);
    }

    #[test]
    fn structure_mismatch_is_reported() {
        let err = CovarianceParams::from_matrix(&fixture(), st(CovarianceKind::Diagonal, 2));
        assert!(matches!(err, Err(Error::StructureMismatch(_))));
        let err = CovarianceParams::from_matrix(
            &Matrix::from_diag(&[1.0, 2.0]),
            st(CovarianceKind::Identity, 2),
        );
        assert!(matches!(err, Err(Error::StructureMismatch(_))));
        let bad = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        assert_eq!(
            CovarianceParams::from_matrix(&bad, st(CovarianceKind::GeneralPd, 2)),
            Err(Error::NotPositiveDefinite)
        );
        let asym = Matrix::from_rows(&[&[1.0, 0.2], &[0.1, 1.0]]).unwrap();
        assert_eq!(
            CovarianceParams::from_matrix(&asym, st(CovarianceKind::GeneralPd, 2)),
            Err(Error::NotSymmetric)
        );
    }

    #[test]
    fn compound_symmetric_q3_stays_pd_at_extremes() {
        let s = st(CovarianceKind::CompoundSymmetric, 3);
        for z in [-30.0, -3.0, 0.0, 3.0] {
            let p = CovarianceParams::new(s, vec![0.1, z]).unwrap();
            assert!(cholesky(&p.to_matrix()).is_ok(), "z = {z}");
        }
    }

    #[test]
    fn kind_names_parse() {
        for k in [
            CovarianceKind::GeneralPd,
            CovarianceKind::Diagonal,
            CovarianceKind::Identity,
            CovarianceKind::CompoundSymmetric,
        ] {
            assert_eq!(k.name().parse::<CovarianceKind>().unwrap(), k);
        }
        assert_eq!("pdSymm".parse::<CovarianceKind>().unwrap(), CovarianceKind::GeneralPd);
        assert!("pdblock".parse::<CovarianceKind>().is_err());
        assert_eq!(CovarianceKind::default(), CovarianceKind::Diagonal);
    }

    proptest! {
        #[test]
        fn every_theta_is_pd(theta in proptest::collection::vec(-3f64..3.0, 6)) {
            let p = CovarianceParams::new(st(CovarianceKind::GeneralPd, 3), theta).unwrap();
            let m = p.to_matrix();
            prop_assert!(m.is_symmetric(1e-14));
            prop_assert!(cholesky(&m).is_ok());
            let l = p.cholesky_factor();
            prop_assert!(l.matmul(&l.transpose()).unwrap().max_abs_diff(&m) < 1e-12 * (1.0 + m.as_slice().iter().fold(0.0f64, |a, b| a.max(b.abs()))));
        }

        #[test]
        fn general_pd_agrees_with_diagonal(logsd in proptest::collection::vec(-2f64..2.0, 3)) {
            let diag = CovarianceParams::new(st(CovarianceKind::Diagonal, 3), logsd.clone()).unwrap();
            let general = CovarianceParams::new(
                st(CovarianceKind::GeneralPd, 3),
                vec![logsd[0], 0.0, logsd[1], 0.0, 0.0, logsd[2]],
            ).unwrap();
            prop_assert!(diag.to_matrix().max_abs_diff(&general.to_matrix()) < 1e-12);
        }
    }
}
