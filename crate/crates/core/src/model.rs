//! Clustered data, the asymmetric Laplace working likelihood and the check
//! function.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Quantile level τ, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(QuantileLevel(tau))
        } else {
            Err(Error::InvalidQuantile(tau))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        QuantileLevel::new(tau)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(t: QuantileLevel) -> f64 {
        t.0
    }
}

/// One cluster's response, fixed-effects design `X` (n×p) and random-effects
/// design `Z` (n×q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterData {
    pub id: String,
    pub y: Vec<f64>,
    pub x: Matrix,
    pub z: Matrix,
}

impl ClusterData {
    pub fn new(id: impl Into<String>, y: Vec<f64>, x: Matrix, z: Matrix) -> Result<Self> {
        let id = id.into();
        if y.is_empty() {
            return Err(Error::EmptyCluster(id));
        }
        for (what, m) in [("X rows", &x), ("Z rows", &z)] {
            if m.rows() != y.len() {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: y.len(),
                    found: m.rows(),
                });
            }
        }
        if x.cols() == 0 || z.cols() == 0 {
            return Err(Error::DimensionMismatch {
                what: "design columns",
                expected: 1,
                found: 0,
            });
        }
        Ok(ClusterData { id, y, x, z })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// M clusters sharing the same `p` and `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    clusters: Vec<ClusterData>,
    p: usize,
    q: usize,
    n_obs: usize,
}

impl LongitudinalDataset {
    pub fn new(clusters: Vec<ClusterData>) -> Result<Self> {
        let first = clusters.first().ok_or(Error::EmptyDataset)?;
        let (p, q) = (first.x.cols(), first.z.cols());
        for c in &clusters {
            if c.x.cols() != p {
                return Err(Error::DimensionMismatch {
                    what: "fixed-effects columns",
                    expected: p,
                    found: c.x.cols(),
                });
            }
            if c.z.cols() != q {
                return Err(Error::DimensionMismatch {
                    what: "random-effects columns",
                    expected: q,
                    found: c.z.cols(),
                });
            }
        }
        let n_obs = clusters.iter().map(ClusterData::len).sum();
        Ok(LongitudinalDataset {
            clusters,
            p,
            q,
            n_obs,
        })
    }

    #[inline]
    pub fn clusters(&self) -> &[ClusterData] {
        &self.clusters
    }

    /// Number of clusters, M.
    #[inline]
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Total number of observations, N.
    #[inline]
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    /// Applies `f` to every response, keeping designs and labels.
    pub fn map_response(&self, f: impl Fn(f64) -> f64) -> LongitudinalDataset {
        let clusters = self
            .clusters
            .iter()
            .map(|c| ClusterData {
                y: c.y.iter().map(|&v| f(v)).collect(),
                ..c.clone()
            })
            .collect();
        LongitudinalDataset {
            clusters,
            ..*self
        }
    }

    /// Iterates `(y, x_row)` over all observations in cluster order.
    pub fn observations(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.clusters
            .iter()
            .flat_map(|c| c.y.iter().enumerate().map(move |(j, &y)| (y, c.x.row(j))))
    }
}

/// Fixed-effects coefficient vector β_τ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffects(pub Vec<f64>);

impl FixedEffects {
    pub fn zeros(p: usize) -> Self {
        FixedEffects(alloc::vec![0.0; p])
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Location, scale and skew of an asymmetric Laplace distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlParams {
    mu: f64,
    sigma: f64,
    tau: QuantileLevel,
}

impl AlParams {
    pub fn new(mu: f64, sigma: f64, tau: QuantileLevel) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::NonPositiveScale(sigma));
        }
        Ok(AlParams { mu, sigma, tau })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> QuantileLevel {
        self.tau
    }
}

/// `ρ_τ(r) = r (τ − 1{r < 0})`.
#[inline]
pub fn check_function(r: f64, tau: QuantileLevel) -> f64 {
    check_loss(r, tau.value())
}

#[inline(always)]
pub(crate) fn check_loss(r: f64, tau: f64) -> f64 {
    if r < 0.0 {
        r * (tau - 1.0)
    } else {
        r * tau
    }
}

/// `log{τ(1−τ)/σ} − ρ_τ(y − μ)/σ`.
pub fn al_log_density(y: f64, params: &AlParams) -> f64 {
    let tau = params.tau.value();
    (tau * (1.0 - tau) / params.sigma).ln() - check_loss(y - params.mu, tau) / params.sigma
}

/// Draws from AL(μ, σ, τ) as `μ + σ(E₁/τ − E₂/(1−τ))` with unit exponentials.
pub fn al_sample<R: Rng + ?Sized>(params: &AlParams, rng: &mut R) -> f64 {
    let tau = params.tau.value();
    let e1: f64 = Exp1.sample(rng);
    let e2: f64 = Exp1.sample(rng);
    params.mu + params.sigma * (e1 / tau - e2 / (1.0 - tau))
}

/// `X β + Z u` for one cluster.
pub fn linear_predictor(cluster: &ClusterData, beta: &FixedEffects, u: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != cluster.x.cols() {
        return Err(Error::DimensionMismatch {
            what: "fixed effects",
            expected: cluster.x.cols(),
            found: beta.len(),
        });
    }
    if u.len() != cluster.z.cols() {
        return Err(Error::DimensionMismatch {
            what: "random effects",
            expected: cluster.z.cols(),
            found: u.len(),
        });
    }
    Ok((0..cluster.len())
        .map(|j| dot(cluster.x.row(j), beta.as_slice()) + dot(cluster.z.row(j), u))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tau(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    #[test]
    fn quantile_level_bounds() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert!(QuantileLevel::new(0.05).is_ok());
    }

    #[test]
    fn check_function_examples() {
        assert_eq!(check_function(0.0, tau(0.3)), 0.0);
        assert_eq!(check_function(-3.0, tau(0.5)), 1.5);
        assert_eq!(check_function(-2.0, tau(0.25)), 1.5);
    }

    #[test]
    fn log_density_examples() {
        let p = AlParams::new(1.0, 0.2, tau(0.5)).unwrap();
        assert!((al_log_density(1.0, &p) - 1.25f64.ln()).abs() < 1e-15);
        let p = AlParams::new(0.0, 1.0, tau(0.5)).unwrap();
        assert!((al_log_density(1.0, &p) - (0.25f64.ln() - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn log_density_rejects_bad_scale() {
        assert_eq!(
            AlParams::new(0.0, 0.0, tau(0.5)),
            Err(Error::NonPositiveScale(0.0))
        );
        assert!(AlParams::new(0.0, -1.0, tau(0.5)).is_err());
    }

    #[test]
    fn log_density_slopes_around_kink() {
        let (t, s) = (0.3, 0.7);
        let p = AlParams::new(2.0, s, tau(t)).unwrap();
        let h = 1e-3;
        let left = (al_log_density(2.0 - h, &p) - al_log_density(2.0 - 2.0 * h, &p)) / h;
        let right = (al_log_density(2.0 + 2.0 * h, &p) - al_log_density(2.0 + h, &p)) / h;
        assert!((left - (1.0 - t) / s).abs() < 1e-9);
        assert!((right + t / s).abs() < 1e-9);
    }

    #[test]
    fn sample_mean_matches_moment() {
        // E[y] = μ + σ(1−2τ)/(τ(1−τ)); (μ=0, σ=1, τ=0.25) gives 8/3
        let p = AlParams::new(0.0, 1.0, tau(0.25)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| al_sample(&p, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 8.0 / 3.0).abs() < 4.0 * se, "mean {mean}");

        let p = AlParams::new(0.0, 0.2, tau(0.5)).unwrap();
        let draws: Vec<f64> = (0..n).map(|_| al_sample(&p, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 * (0.08 / n as f64).sqrt());
    }

    #[test]
    fn linear_predictor_hand_example() {
        let x = Matrix::from_rows(&[&[1.0, 2.0, 0.0], &[1.0, -1.0, 3.0]]).unwrap();
        let z = Matrix::from_rows(&[&[1.0, 0.0], &[2.0, 1.0]]).unwrap();
        let c = ClusterData::new("a", vec![0.0, 0.0], x, z).unwrap();
        let beta = FixedEffects(vec![1.0, 2.0, -1.0]);
        // row 1: 1 + 4 + 0 + 0.5 = 5.5; row 2: 1 - 2 - 3 + 1 - 2 = -5
        let eta = linear_predictor(&c, &beta, &[0.5, -2.0]).unwrap();
        assert_eq!(eta, vec![5.5, -5.0]);
        let eta0 = linear_predictor(&c, &beta, &[0.0, 0.0]).unwrap();
        assert_eq!(eta0, vec![5.0, -4.0]);
    }

    #[test]
    fn linear_predictor_identity_z_returns_u() {
        let c = ClusterData::new(
            "a",
            vec![0.0, 0.0],
            Matrix::from_rows(&[&[1.0], &[1.0]]).unwrap(),
            Matrix::identity(2),
        )
        .unwrap();
        let eta = linear_predictor(&c, &FixedEffects::zeros(1), &[3.0, -4.0]).unwrap();
        assert_eq!(eta, vec![3.0, -4.0]);
        assert!(linear_predictor(&c, &FixedEffects::zeros(2), &[3.0, -4.0]).is_err());
        assert!(linear_predictor(&c, &FixedEffects::zeros(1), &[3.0]).is_err());
    }

    #[test]
    fn cluster_and_dataset_validation() {
        let x = Matrix::from_rows(&[&[1.0]]).unwrap();
        assert!(ClusterData::new("e", vec![], Matrix::zeros(0, 1), Matrix::zeros(0, 1)).is_err());
        assert!(ClusterData::new("a", vec![1.0, 2.0], x.clone(), x.clone()).is_err());
        assert_eq!(LongitudinalDataset::new(vec![]), Err(Error::EmptyDataset));
        let a = ClusterData::new("a", vec![1.0], x.clone(), x.clone()).unwrap();
        let b = ClusterData::new(
            "b",
            vec![1.0],
            Matrix::from_rows(&[&[1.0, 2.0]]).unwrap(),
            x,
        )
        .unwrap();
        assert!(LongitudinalDataset::new(vec![a, b]).is_err());
    }

    proptest! {
        #[test]
        fn check_function_partitions_abs(r in -1e3f64..1e3, t in 0.001f64..0.999) {
            let t = tau(t);
            let lhs = check_function(r, t) + check_function(-r, t);
            prop_assert!((lhs - r.abs()).abs() <= 1e-12 * (1.0 + r.abs()));
            prop_assert!(check_function(r, t) >= 0.0);
        }

        #[test]
        fn linear_predictor_is_linear(
            b in proptest::collection::vec(-5f64..5.0, 2),
            u in proptest::collection::vec(-5f64..5.0, 2),
        ) {
            let c = ClusterData::new(
                "a",
                vec![0.0; 3],
                Matrix::from_rows(&[&[1.0, 0.5], &[1.0, -1.5], &[1.0, 2.0]]).unwrap(),
                Matrix::from_rows(&[&[0.3, 1.0], &[-0.2, 0.0], &[1.1, 0.7]]).unwrap(),
            ).unwrap();
            let once = linear_predictor(&c, &FixedEffects(b.clone()), &u).unwrap();
            let b2: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
            let u2: Vec<f64> = u.iter().map(|v| 2.0 * v).collect();
            let twice = linear_predictor(&c, &FixedEffects(b2), &u2).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((2.0 * a - b).abs() < 1e-12);
            }
        }
    }
}
