//! Synthetic PLN data: uniform covariates, full or diagonal latent covariance,
//! Gaussian latent layer and Poisson counts.
//!
//! Randomness comes from ChaCha8 keyed by the scenario seed. Each
//! `(replication, purpose)` pair reads its own 64-bit stream
//! (`replication << 8 | purpose`), so replications are independent of one another
//! and each piece (design, covariance, latent layer, counts) can be regenerated
//! on its own.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Result, SicError};
use crate::model::{CountDataset, MAX_EXPONENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CovarianceKind {
    /// `Σ = ΨᵀΨ`, `Ψ_ij ~ U[-1.5, 1.5]`
    Full,
    /// `Σ = diag(U[0, 5])`
    Diagonal,
}

impl std::fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovarianceKind::Full => "full",
            CovarianceKind::Diagonal => "diagonal",
        })
    }
}

impl std::str::FromStr for CovarianceKind {
    type Err = SicError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(CovarianceKind::Full),
            "diagonal" | "diag" => Ok(CovarianceKind::Diagonal),
            other => Err(SicError::Usage(format!("unknown covariance kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    Design = 1,
    Covariance = 2,
    Latent = 3,
    Counts = 4,
    HoldoutLatent = 5,
    HoldoutCounts = 6,
}

/// Coefficients of the four reference species on six covariates (rows are
/// covariates, columns species).
pub const REFERENCE_PATTERN: [[f64; 4]; 6] = [
    [0.0, 0.5, 1.0, 1.0],
    [1.0, 0.0, 0.5, 1.0],
    [1.0, 0.0, 0.5, 0.0],
    [1.0, 1.0, 1.0, 0.0],
    [1.0, 1.0, 1.0, 0.5],
    [0.0, 0.0, 0.0, 0.0],
];

/// Default `(d+1) × p` coefficient matrix: `intercept` in the first row, then the
/// reference pattern tiled across species (and across covariates when `d > 6`).
pub fn default_coefficients(d: usize, p: usize, intercept: f64) -> DMatrix<f64> {
    DMatrix::from_fn(d + 1, p, |k, j| {
        if k == 0 {
            intercept
        } else {
            REFERENCE_PATTERN[(k - 1) % 6][j % 4]
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub n: usize,
    pub p: usize,
    /// Number of covariates besides the intercept.
    pub d: usize,
    pub covariance: CovarianceKind,
    /// `(d+1) × p`, intercept row first.
    pub coefficients: DMatrix<f64>,
    pub seed: u64,
    pub replication: u64,
}

impl SimScenario {
    pub fn new(n: usize, p: usize, covariance: CovarianceKind, seed: u64) -> Self {
        let d = 6;
        Self {
            n,
            p,
            d,
            covariance,
            coefficients: default_coefficients(d, p, 0.0),
            seed,
            replication: 0,
        }
    }

    pub fn with_replication(mut self, replication: u64) -> Self {
        self.replication = replication;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(SicError::Domain(format!("n and p must be positive (n={}, p={})", self.n, self.p)));
        }
        if self.coefficients.shape() != (self.d + 1, self.p) {
            return Err(SicError::Dimension(format!(
                "coefficients are {:?}, expected ({}, {})",
                self.coefficients.shape(),
                self.d + 1,
                self.p
            )));
        }
        Ok(())
    }

    /// Whether the dimensions and coefficients follow the published grid.
    pub fn is_reference_grid(&self) -> bool {
        [30, 50, 100, 1000].contains(&self.n)
            && [10, 20, 30, 40].contains(&self.p)
            && self.coefficients.rows(1, self.d).iter().all(|v| [0.0, 0.5, 1.0].contains(v))
    }

    fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((self.replication << 8) | stream as u64);
        rng
    }
}

/// `n × (d+1)` design: a column of ones, then iid `U[0.5, 1.5]` covariates.
pub fn gen_design(scenario: &SimScenario) -> Result<DMatrix<f64>> {
    scenario.validate()?;
    let mut rng = scenario.rng(Stream::Design);
    let mut x = DMatrix::from_element(scenario.n, scenario.d + 1, 1.0);
    for k in 1..=scenario.d {
        for i in 0..scenario.n {
            x[(i, k)] = rng.random_range(0.5..1.5);
        }
    }
    Ok(x)
}

/// Latent covariance for the scenario; full draws are repeated (at most 100 times)
/// until the condition number is below `1e10`.
pub fn gen_covariance(scenario: &SimScenario) -> Result<DMatrix<f64>> {
    scenario.validate()?;
    let p = scenario.p;
    let mut rng = scenario.rng(Stream::Covariance);
    match scenario.covariance {
        CovarianceKind::Diagonal => Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_fn(p, |_, _| {
            rng.random_range(0.0..5.0f64).max(1e-3)
        }))),
        CovarianceKind::Full => {
            for _ in 0..100 {
                let psi = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.5..1.5));
                let sigma = psi.tr_mul(&psi);
                let eig = SymmetricEigen::new(sigma.clone()).eigenvalues;
                let (lo, hi) = (eig.min(), eig.max());
                if lo > 1e-10 * hi {
                    return Ok(sigma);
                }
            }
            Err(SicError::Numeric("could not draw a well-conditioned covariance in 100 attempts".into()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: CountDataset,
    pub b_true: DMatrix<f64>,
    pub sigma_true: DMatrix<f64>,
    /// Latent log-intensities.
    pub z: DMatrix<f64>,
}

/// Draws counts from the scenario with zero offsets.
pub fn gen_counts(scenario: &SimScenario) -> Result<Simulated> {
    let x = gen_design(scenario)?;
    let sigma = gen_covariance(scenario)?;
    simulate_with(scenario, x, &scenario.coefficients, sigma)
}

/// Draws `Z_i ~ N(x_iᵀB, Σ)` and `Y_ij ~ Poisson(exp Z_ij)` for a given design,
/// coefficients and covariance, using the scenario's latent and count streams.
pub fn simulate_with(
    scenario: &SimScenario,
    x: DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: DMatrix<f64>,
) -> Result<Simulated> {
    draw(scenario, x, b, sigma, Stream::Latent, Stream::Counts)
}

/// A fresh replica of the latent layer and counts for the same design,
/// coefficients and covariance, read from streams no other draw uses.
pub fn gen_holdout(scenario: &SimScenario, x: DMatrix<f64>, b: &DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Simulated> {
    draw(scenario, x, b, sigma, Stream::HoldoutLatent, Stream::HoldoutCounts)
}

fn draw(
    scenario: &SimScenario,
    x: DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma: DMatrix<f64>,
    latent: Stream,
    counts: Stream,
) -> Result<Simulated> {
    let (n, p) = (x.nrows(), b.ncols());
    let chol = nalgebra::Cholesky::new(sigma.clone())
        .ok_or_else(|| SicError::NotSpd("latent covariance".into()))?;
    let l = chol.l();
    let mut latent_rng = scenario.rng(latent);
    let xi = DMatrix::from_fn(p, n, |_, _| latent_rng.sample::<f64, _>(StandardNormal));
    let z = x.clone() * b + (l * xi).transpose();

    let mut count_rng = scenario.rng(counts);
    let mut y = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let e = z[(i, j)];
            if e > MAX_EXPONENT {
                return Err(SicError::Numeric(format!(
                    "latent log-rate {e:.1} at ({i}, {j}) overflows; use smaller coefficients"
                )));
            }
            let rate = e.exp();
            y[(i, j)] = if rate > 0.0 {
                let dist = Poisson::new(rate).map_err(|err| {
                    SicError::Numeric(format!("rate {rate:.3e} at ({i}, {j}) cannot be sampled ({err}); use smaller coefficients"))
                })?;
                dist.sample(&mut count_rng)
            } else {
                0.0
            };
        }
    }
    Ok(Simulated {
        data: CountDataset::new(y, x, None)?,
        b_true: b.clone(),
        sigma_true: sigma,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(n: usize, p: usize, kind: CovarianceKind) -> SimScenario {
        SimScenario::new(n, p, kind, 11)
    }

    #[test]
    fn design_support_and_intercept() {
        let x = gen_design(&scenario(200, 4, CovarianceKind::Full)).unwrap();
        assert_eq!(x.shape(), (200, 7));
        assert!(x.column(0).iter().all(|&v| v == 1.0));
        assert!(x.columns(1, 6).iter().all(|&v| (0.5..=1.5).contains(&v)));
    }

    #[test]
    fn design_means_near_one() {
        let x = gen_design(&scenario(1000, 4, CovarianceKind::Full)).unwrap();
        for k in 1..7 {
            assert!((x.column(k).mean() - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let s = scenario(50, 5, CovarianceKind::Full);
        let a = gen_counts(&s).unwrap();
        let b = gen_counts(&s).unwrap();
        assert_eq!(a.data.y(), b.data.y());
        assert_eq!(a.data.x(), b.data.x());
        let c = gen_counts(&s.clone().with_replication(1)).unwrap();
        assert_ne!(a.data.y(), c.data.y());
    }

    #[test]
    fn holdout_shares_design_but_not_counts() {
        let s = scenario(50, 3, CovarianceKind::Diagonal);
        let a = gen_counts(&s).unwrap();
        let h = gen_holdout(&s, a.data.x().clone(), &a.b_true, a.sigma_true.clone()).unwrap();
        assert_eq!(a.data.x(), h.data.x());
        assert_ne!(a.data.y(), h.data.y());
    }

    #[test]
    fn full_covariance_is_symmetric_psd() {
        for seed in 0..10 {
            let mut s = scenario(10, 6, CovarianceKind::Full);
            s.seed = seed;
            let sigma = gen_covariance(&s).unwrap();
            assert_eq!(sigma, sigma.transpose());
            assert!(SymmetricEigen::new(sigma).eigenvalues.min() >= -1e-10);
        }
    }

    #[test]
    fn full_covariance_scalar_case() {
        let mut s = scenario(10, 1, CovarianceKind::Full);
        s.coefficients = default_coefficients(6, 1, 0.0);
        let sigma = gen_covariance(&s).unwrap();
        assert!(sigma[(0, 0)] >= 0.0 && sigma[(0, 0)] <= 2.25);
    }

    #[test]
    fn diagonal_covariance_structure() {
        let sigma = gen_covariance(&scenario(10, 8, CovarianceKind::Diagonal)).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert_eq!(sigma[(i, j)], 0.0);
                }
            }
            assert!(sigma[(i, i)] >= 1e-3 && sigma[(i, i)] <= 5.0);
        }
    }

    #[test]
    fn tiny_rates_give_zero_counts() {
        let s = scenario(100, 3, CovarianceKind::Full);
        let x = gen_design(&s).unwrap();
        let mut b = DMatrix::zeros(7, 3);
        b.row_mut(0).fill(-60.0);
        let sim = simulate_with(&s, x, &b, DMatrix::identity(3, 3) * 1e-12).unwrap();
        assert!(sim.data.y().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truth_is_passed_through() {
        let s = scenario(20, 4, CovarianceKind::Diagonal);
        let sim = gen_counts(&s).unwrap();
        assert_eq!(sim.b_true, s.coefficients);
    }

    #[test]
    fn overflow_is_reported() {
        let s = scenario(5, 2, CovarianceKind::Diagonal);
        let x = gen_design(&s).unwrap();
        let mut b = DMatrix::zeros(7, 2);
        b.row_mut(0).fill(800.0);
        let err = simulate_with(&s, x, &b, DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, SicError::Numeric(_)));
    }

    #[test]
    fn reference_pattern_layout() {
        let b = default_coefficients(6, 4, 0.0);
        // species 2 column: 0.5, 0, 0, 1, 1, 0
        let col: Vec<f64> = b.column(1).iter().skip(1).copied().collect();
        assert_eq!(col, vec![0.5, 0.0, 0.0, 1.0, 1.0, 0.0]);
        assert!(SimScenario::new(1000, 10, CovarianceKind::Full, 1).is_reference_grid());
        assert!(!SimScenario::new(1000, 4, CovarianceKind::Full, 1).is_reference_grid());
    }
}
