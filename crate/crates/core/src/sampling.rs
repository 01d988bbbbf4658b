//! Gaussian return samples and their estimators.
//!
//! # Random streams
//!
//! A sample is keyed by a single `u64` seed which keys a ChaCha8 stream
//! (`ChaCha8Rng::seed_from_u64`). Standard normals come from the Box-Muller
//! transform: each pair of normals consumes exactly two `u64` words, so the
//! entry-to-word mapping is fixed. Entries are filled observation-major
//! (`t = 0, asset 0..N`, then `t = 1`, ...). The Monte Carlo layer derives
//! one seed per trial as `base_seed ^ trial_index` (see [`substream_seed`]).

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markowitz::{compute_abc, MarketModel, DEGENERACY_TOLERANCE};

/// Seed of the `trial_index`-th substream.
pub fn substream_seed(base_seed: u64, trial_index: u64) -> u64 {
    base_seed ^ trial_index
}

/// SplitMix64 finalizer; used to decorrelate base seeds of separate cells.
pub fn mix_seed(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform on `(0, 1]`.
fn open_unit(word: u64) -> f64 {
    ((word >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform on `[0, 1)`.
fn half_open_unit(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `N × T` block of independent standard normals for `seed`.
pub fn standard_normal_block(n_assets: usize, t_obs: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n_assets * t_obs;
    let mut values = Vec::with_capacity(total + 1);
    while values.len() < total {
        let u1 = open_unit(rng.next_u64());
        let u2 = half_open_unit(rng.next_u64());
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        values.push(radius * c);
        values.push(radius * s);
    }
    values.truncate(total);
    // column-major storage with N rows == observation-major fill order
    DMatrix::from_vec(n_assets, t_obs, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// `N × T`, one column per observation.
    pub returns: DMatrix<f64>,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(returns: DMatrix<f64>, seed: u64) -> Result<Self> {
        if returns.ncols() < 2 || returns.nrows() == 0 {
            return Err(Error::InvalidParameter(format!(
                "a sample needs N >= 1 and T >= 2, got {}x{}",
                returns.nrows(),
                returns.ncols()
            )));
        }
        Ok(Self { returns, seed })
    }

    pub fn n_assets(&self) -> usize {
        self.returns.nrows()
    }

    pub fn n_obs(&self) -> usize {
        self.returns.ncols()
    }

    /// Assets as rows, observations as columns, under a
    /// `# N=<n> T=<t> seed=<s>` header.
    pub fn to_csv_string(&self) -> String {
        let mut out = format!(
            "# N={} T={} seed={}\n",
            self.n_assets(),
            self.n_obs(),
            self.seed
        );
        for row in self.returns.row_iter() {
            let mut first = true;
            for v in row.iter() {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Draws `x = D z + μ 1ᵀ` with `D` the Cholesky factor of the model.
pub fn generate(model: &MarketModel, t_obs: usize, seed: u64) -> Result<SampleSet> {
    if t_obs < 2 {
        return Err(Error::InvalidParameter(format!("t_obs must be >= 2, got {t_obs}")));
    }
    let z = standard_normal_block(model.n_assets(), t_obs, seed);
    let mut x = model.cholesky().lower() * z;
    for mut col in x.column_iter_mut() {
        col += model.means();
    }
    SampleSet::new(x, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Divisor {
    /// `1/T`; the large-sample convention.
    #[default]
    #[serde(rename = "T")]
    T,
    /// `1/(T-1)`; the unbiased estimator.
    #[serde(rename = "T_minus_1")]
    TMinusOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEstimators {
    pub mean_hat: DVector<f64>,
    pub cov_hat: DMatrix<f64>,
    pub divisor: Divisor,
}

pub fn estimate(sample: &SampleSet, divisor: Divisor) -> SampleEstimators {
    let n = sample.n_assets();
    let t = sample.n_obs();
    let x = &sample.returns;
    let mean_hat = DVector::from_iterator(n, x.row_iter().map(|r| r.sum() / t as f64));
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean_hat;
    }
    let denom = match divisor {
        Divisor::T => t as f64,
        Divisor::TMinusOne => (t - 1) as f64,
    };
    let mut cov_hat = &centered * centered.transpose() / denom;
    for i in 0..n {
        for j in (i + 1)..n {
            cov_hat[(i, j)] = cov_hat[(j, i)];
        }
    }
    SampleEstimators {
        mean_hat,
        cov_hat,
        divisor,
    }
}

/// Factor loadings: one shared value or one per asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Loadings {
    Uniform(f64),
    PerAsset(Vec<f64>),
}

/// Covariance fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceFamily {
    Identity,
    /// `Σ_ij = ρ^|i-j|`
    Toeplitz { rho: f64 },
    /// `Σ = β βᵀ + idio · I`
    OneFactor { loadings: Loadings, idio: f64 },
    Custom { covariance: Vec<Vec<f64>> },
}

impl CovarianceFamily {
    pub fn validate(&self) -> Result<()> {
        match self {
            CovarianceFamily::Identity => Ok(()),
            CovarianceFamily::Toeplitz { rho } => {
                if rho.abs() < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "toeplitz requires |rho| < 1, got {rho}"
                    )))
                }
            }
            CovarianceFamily::OneFactor { loadings, idio } => {
                if !(*idio > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "one_factor requires idio > 0, got {idio}"
                    )));
                }
                let finite = match loadings {
                    Loadings::Uniform(b) => b.is_finite(),
                    Loadings::PerAsset(v) => v.iter().all(|b| b.is_finite()),
                };
                if finite {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("one_factor loadings must be finite".into()))
                }
            }
            CovarianceFamily::Custom { covariance } => {
                let n = covariance.len();
                if n == 0 || covariance.iter().any(|r| r.len() != n) {
                    Err(Error::Dimension("custom covariance must be a non-empty square matrix".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            CovarianceFamily::Identity => "identity".into(),
            CovarianceFamily::Toeplitz { rho } => format!("toeplitz(rho={rho})"),
            CovarianceFamily::OneFactor { loadings, idio } => match loadings {
                Loadings::Uniform(b) => format!("one_factor(beta={b};idio={idio})"),
                Loadings::PerAsset(_) => format!("one_factor(beta=vector;idio={idio})"),
            },
            CovarianceFamily::Custom { .. } => "custom".into(),
        }
    }

    pub fn covariance(&self, n_assets: usize) -> Result<DMatrix<f64>> {
        self.validate()?;
        match self {
            CovarianceFamily::Identity => Ok(DMatrix::identity(n_assets, n_assets)),
            CovarianceFamily::Toeplitz { rho } => Ok(DMatrix::from_fn(n_assets, n_assets, |i, j| {
                rho.powi(i.abs_diff(j) as i32)
            })),
            CovarianceFamily::OneFactor { loadings, idio } => {
                let beta = match loadings {
                    Loadings::Uniform(b) => DVector::from_element(n_assets, *b),
                    Loadings::PerAsset(v) if v.len() == n_assets => DVector::from_column_slice(v),
                    Loadings::PerAsset(v) => {
                        return Err(Error::Dimension(format!(
                            "{} loadings for {n_assets} assets",
                            v.len()
                        )))
                    }
                };
                Ok(&beta * beta.transpose() + DMatrix::identity(n_assets, n_assets) * *idio)
            }
            CovarianceFamily::Custom { covariance } => {
                if covariance.len() != n_assets {
                    return Err(Error::Dimension(format!(
                        "custom covariance is {0}x{0}, requested {n_assets} assets",
                        covariance.len()
                    )));
                }
                let flat: Vec<f64> = covariance.iter().flatten().cloned().collect();
                Ok(DMatrix::from_row_slice(n_assets, n_assets, &flat))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanSpec {
    /// Evenly spaced from `lo` to `hi` inclusive.
    Linspace { lo: f64, hi: f64 },
    /// Uniform on `[0, 1)` from a ChaCha8 stream keyed by `seed`.
    Random { seed: u64 },
    Custom { values: Vec<f64> },
}

impl MeanSpec {
    pub fn means(&self, n_assets: usize) -> Result<DVector<f64>> {
        match self {
            MeanSpec::Linspace { lo, hi } => Ok(if n_assets == 1 {
                DVector::from_element(1, *lo)
            } else {
                let step = (hi - lo) / (n_assets - 1) as f64;
                DVector::from_fn(n_assets, |i, _| lo + step * i as f64)
            }),
            MeanSpec::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok(DVector::from_fn(n_assets, |_, _| half_open_unit(rng.next_u64())))
            }
            MeanSpec::Custom { values } => {
                if values.len() != n_assets {
                    return Err(Error::Dimension(format!(
                        "{} custom means for {n_assets} assets",
                        values.len()
                    )));
                }
                Ok(DVector::from_column_slice(values))
            }
        }
    }
}

/// Builds a model from a covariance family and a mean specification,
/// rejecting means collinear with the ones vector.
pub fn make_family(family: &CovarianceFamily, n_assets: usize, mean_spec: &MeanSpec) -> Result<MarketModel> {
    if n_assets == 0 {
        return Err(Error::InvalidParameter("n_assets must be positive".into()));
    }
    let model = MarketModel::new(family.covariance(n_assets)?, mean_spec.means(n_assets)?)?;
    let abc = compute_abc(&model);
    if abc.is_degenerate() {
        return Err(Error::DegenerateReturns {
            discriminant: abc.discriminant,
            threshold: DEGENERACY_TOLERANCE * abc.a * abc.c,
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_model(n: usize, means: &[f64]) -> MarketModel {
        MarketModel::new(DMatrix::identity(n, n), DVector::from_column_slice(means)).unwrap()
    }

    #[test]
    fn identity_zero_mean_sample_is_the_raw_block() {
        let m = identity_model(3, &[0.0, 0.0, 0.0]);
        let s = generate(&m, 7, 99).unwrap();
        assert_eq!(s.returns, standard_normal_block(3, 7, 99));
    }

    #[test]
    fn scaling_covariance_by_four_doubles_centered_entries() {
        let m = MarketModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
            DVector::from_column_slice(&[0.1, -0.2]),
        )
        .unwrap();
        let m4 = m.scaled_covariance(4.0).unwrap();
        let a = generate(&m, 20, 5).unwrap();
        let b = generate(&m4, 20, 5).unwrap();
        for i in 0..2 {
            for t in 0..20 {
                let ca = a.returns[(i, t)] - m.means()[i];
                let cb = b.returns[(i, t)] - m.means()[i];
                assert_relative_eq!(cb, 2.0 * ca, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn generate_is_reproducible_and_seed_sensitive() {
        let m = identity_model(2, &[1.0, 0.0]);
        assert_eq!(generate(&m, 10, 1).unwrap(), generate(&m, 10, 1).unwrap());
        assert_ne!(generate(&m, 10, 1).unwrap(), generate(&m, 10, 2).unwrap());
        assert!(generate(&m, 1, 1).is_err());
    }

    #[test]
    fn large_sample_covariance_converges() {
        let m = MarketModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let est = estimate(&generate(&m, 100_000, 11).unwrap(), Divisor::T);
        for (a, b) in est.cov_hat.iter().zip(m.covariance().iter()) {
            assert!((a - b).abs() < 0.02);
        }
    }

    #[test]
    fn constant_columns_have_zero_covariance() {
        let x = DMatrix::from_fn(2, 5, |i, _| [3.0, -1.0][i]);
        let est = estimate(&SampleSet::new(x, 0).unwrap(), Divisor::TMinusOne);
        assert_eq!(est.mean_hat.as_slice(), &[3.0, -1.0]);
        assert!(est.cov_hat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divisor_conventions_by_hand() {
        let x = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        let s = SampleSet::new(x, 0).unwrap();
        let unbiased = estimate(&s, Divisor::TMinusOne);
        assert_eq!(unbiased.mean_hat[0], 1.0);
        assert_eq!(unbiased.cov_hat[(0, 0)], 2.0);
        assert_eq!(estimate(&s, Divisor::T).cov_hat[(0, 0)], 1.0);
    }

    #[test]
    fn rank_deficient_when_t_not_above_n() {
        let m = identity_model(6, &[0.0; 6]);
        let est = estimate(&generate(&m, 4, 3).unwrap(), Divisor::T);
        let eig = est.cov_hat.symmetric_eigenvalues();
        let max = eig.max();
        let small = eig.iter().filter(|&&e| e < 1e-8 * max).count();
        // rank min(N, T-1) = 3
        assert_eq!(small, 3);
    }

    #[test]
    fn family_fixtures() {
        let m = make_family(&CovarianceFamily::Identity, 3, &MeanSpec::Linspace { lo: 0.0, hi: 1.0 }).unwrap();
        assert_eq!(m.covariance(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(m.means().as_slice(), &[0.0, 0.5, 1.0]);

        let t = CovarianceFamily::Toeplitz { rho: 0.6 }.covariance(3).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.36, 0.6, 1.0, 0.6, 0.36, 0.6, 1.0]);
        assert_relative_eq!(t, expected, epsilon = 1e-15);

        assert!(CovarianceFamily::Toeplitz { rho: 1.0 }.covariance(3).is_err());
        assert!(CovarianceFamily::OneFactor { loadings: Loadings::Uniform(0.5), idio: 0.0 }
            .validate()
            .is_err());

        let f = CovarianceFamily::OneFactor { loadings: Loadings::PerAsset(vec![1.0, 2.0]), idio: 0.5 };
        let c = f.covariance(2).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.5, 2.0, 2.0, 4.5]));
    }

    #[test]
    fn collinear_means_rejected() {
        let r = make_family(&CovarianceFamily::Identity, 3, &MeanSpec::Linspace { lo: 0.2, hi: 0.2 });
        assert!(matches!(r, Err(Error::DegenerateReturns { .. })));
    }

    #[test]
    fn family_json_shapes() {
        let f: CovarianceFamily =
            serde_json::from_str(r#"{"kind":"one_factor","loadings":0.5,"idio":1.0}"#).unwrap();
        assert_eq!(f, CovarianceFamily::OneFactor { loadings: Loadings::Uniform(0.5), idio: 1.0 });
        let f: CovarianceFamily = serde_json::from_str(r#"{"kind":"toeplitz","rho":0.6}"#).unwrap();
        assert_eq!(f, CovarianceFamily::Toeplitz { rho: 0.6 });
        let d: Divisor = serde_json::from_str(r#""T_minus_1""#).unwrap();
        assert_eq!(d, Divisor::TMinusOne);
    }

    #[test]
    fn sample_csv_header() {
        let s = SampleSet::new(DMatrix::from_row_slice(1, 2, &[0.5, -1.0]), 42).unwrap();
        assert_eq!(s.to_csv_string(), "# N=1 T=2 seed=42\n0.5,-1\n");
    }
}
