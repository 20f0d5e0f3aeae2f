//! Gaussian estimation over pooled features and Mahalanobis scoring.
//!
//! The training distribution is a single multivariate Gaussian with the
//! empirical mean and the 1/N-normalized covariance of all pooled training
//! features. Scoring computes the squared Mahalanobis distance of a feature
//! vector to that distribution through a Cholesky solve; the covariance is
//! never inverted explicitly. A singular covariance (guaranteed whenever
//! N < d) is handled by a ridge-retry schedule: a diagonal ridge of
//! `1e-6 * trace(sigma)/d` is added and grown tenfold per retry until the
//! factorization succeeds.
//!
//! All accumulation runs in f64 regardless of the stored feature precision;
//! the centered outer products otherwise lose digits to cancellation.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reduce::PooledFeature;
use crate::tensorio::{self, PoolingConfig, TensorFile, TensorIoError};

const RIDGE_SCALE: f64 = 1e-6;
const MAX_RIDGE_RETRIES: usize = 10;

#[derive(Debug, Error)]
pub enum GaussError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("need at least 2 samples to fit, got {0}")]
    TooFewSamples(usize),
    #[error("covariance factorization failed after {0} ridge retries")]
    FactorizationFailure(usize),
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("model file invalid: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] TensorIoError),
}

/// Squared Mahalanobis distance of one feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MahalanobisScore(pub f64);

impl MahalanobisScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// A fitted training-feature distribution: mean, covariance, and the
/// lower-triangular Cholesky factor of the (possibly ridged) covariance.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mu: Array1<f64>,
    sigma: Array2<f64>,
    chol: Array2<f64>,
    epsilon: f64,
    n_samples: usize,
    pooling: PoolingConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    d: usize,
    epsilon: f64,
    n_samples: usize,
    pooling: PoolingConfig,
}

impl GaussianModel {
    pub fn d(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    pub fn chol(&self) -> &Array2<f64> {
        &self.chol
    }

    /// The ridge that was added to the covariance diagonal; 0 when the
    /// unmodified covariance factorized.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn pooling(&self) -> &PoolingConfig {
        &self.pooling
    }

    /// Build a model from externally supplied moments. Used when the mean
    /// and covariance are known rather than estimated from samples; the
    /// same ridge-retry schedule applies.
    pub fn from_moments(mu: Array1<f64>, sigma: Array2<f64>) -> Result<Self, GaussError> {
        Self::assemble(mu, sigma, 2, PoolingConfig::default())
    }

    fn assemble(
        mu: Array1<f64>,
        sigma: Array2<f64>,
        n_samples: usize,
        pooling: PoolingConfig,
    ) -> Result<Self, GaussError> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(GaussError::DimensionMismatch {
                expected: d,
                actual: sigma.nrows(),
            });
        }
        if mu.iter().any(|v| !v.is_finite()) || sigma.iter().any(|v| !v.is_finite()) {
            return Err(GaussError::NonFiniteInput);
        }
        let (chol, epsilon) = factorize_with_ridge(&sigma)?;
        Ok(Self {
            mu,
            sigma,
            chol,
            epsilon,
            n_samples,
            pooling,
        })
    }

    /// Persist the model as a directory containing `mu.npy`, `sigma.npy`,
    /// `chol.npy` and a `meta.json` sidecar.
    pub fn save(&self, dir: &Path) -> Result<(), GaussError> {
        std::fs::create_dir_all(dir).map_err(TensorIoError::Io)?;
        let d = self.d();
        let mu = TensorFile::from_f64(vec![d], self.mu.to_vec())?;
        tensorio::write_tensor(&mu, &dir.join("mu.npy"))?;
        let sigma = TensorFile::from_f64(vec![d, d], self.sigma.iter().copied().collect())?;
        tensorio::write_tensor(&sigma, &dir.join("sigma.npy"))?;
        let chol = TensorFile::from_f64(vec![d, d], self.chol.iter().copied().collect())?;
        tensorio::write_tensor(&chol, &dir.join("chol.npy"))?;
        let meta = ModelMeta {
            d,
            epsilon: self.epsilon,
            n_samples: self.n_samples,
            pooling: self.pooling.clone(),
        };
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| GaussError::InvalidModel(e.to_string()))?;
        std::fs::write(dir.join("meta.json"), json).map_err(TensorIoError::Io)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, GaussError> {
        let meta_text =
            std::fs::read_to_string(dir.join("meta.json")).map_err(TensorIoError::Io)?;
        let meta: ModelMeta = serde_json::from_str(&meta_text)
            .map_err(|e| GaussError::InvalidModel(e.to_string()))?;
        let mu_t = tensorio::read_tensor(&dir.join("mu.npy"))?;
        let sigma_t = tensorio::read_tensor(&dir.join("sigma.npy"))?;
        let chol_t = tensorio::read_tensor(&dir.join("chol.npy"))?;
        let d = meta.d;
        if mu_t.shape != [d] {
            return Err(GaussError::InvalidModel(format!(
                "mu shape {:?} does not match d={d}",
                mu_t.shape
            )));
        }
        if sigma_t.shape != [d, d] || chol_t.shape != [d, d] {
            return Err(GaussError::InvalidModel(
                "sigma/chol shape does not match d".into(),
            ));
        }
        let mu = Array1::from_vec(mu_t.to_f64_vec());
        let sigma = Array2::from_shape_vec((d, d), sigma_t.to_f64_vec())
            .map_err(|e| GaussError::InvalidModel(e.to_string()))?;
        let chol = Array2::from_shape_vec((d, d), chol_t.to_f64_vec())
            .map_err(|e| GaussError::InvalidModel(e.to_string()))?;
        if mu.iter().any(|v| !v.is_finite())
            || sigma.iter().any(|v| !v.is_finite())
            || chol.iter().any(|v| !v.is_finite())
        {
            return Err(GaussError::NonFiniteInput);
        }
        Ok(Self {
            mu,
            sigma,
            chol,
            epsilon: meta.epsilon,
            n_samples: meta.n_samples,
            pooling: meta.pooling,
        })
    }
}

/// Fit mean and 1/N covariance over pooled features (two-pass, centered).
///
/// The feature dimensionality is fixed by the first sample; any sample with
/// a different length is rejected.
pub fn fit_gaussian(
    samples: &[PooledFeature],
    pooling: &PoolingConfig,
) -> Result<GaussianModel, GaussError> {
    let n = samples.len();
    if n < 2 {
        return Err(GaussError::TooFewSamples(n));
    }
    let d = samples[0].d();
    for s in samples {
        if s.d() != d {
            return Err(GaussError::DimensionMismatch {
                expected: d,
                actual: s.d(),
            });
        }
        if s.values().iter().any(|v| !v.is_finite()) {
            return Err(GaussError::NonFiniteInput);
        }
    }

    let mut mu = Array1::<f64>::zeros(d);
    for s in samples {
        for (m, &v) in mu.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    mu.mapv_inplace(|v| v / n as f64);

    // Accumulate the upper triangle of the centered outer products, then
    // mirror, so sigma is exactly symmetric.
    let mut sigma = Array2::<f64>::zeros((d, d));
    let mut dev = vec![0.0f64; d];
    for s in samples {
        for (t, (&v, &m)) in dev.iter_mut().zip(s.values().iter().zip(mu.iter())) {
            *t = v - m;
        }
        for i in 0..d {
            let di = dev[i];
            for j in i..d {
                sigma[[i, j]] += di * dev[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = sigma[[i, j]] / n as f64;
            sigma[[i, j]] = v;
            sigma[[j, i]] = v;
        }
    }

    GaussianModel::assemble(mu, sigma, n, pooling.clone())
}

/// Squared Mahalanobis distance of `z` to the model: with L the Cholesky
/// factor, solve `L y = z - mu` and return `y . y`.
pub fn mahalanobis(z: &PooledFeature, m: &GaussianModel) -> Result<MahalanobisScore, GaussError> {
    if z.d() != m.d() {
        return Err(GaussError::DimensionMismatch {
            expected: m.d(),
            actual: z.d(),
        });
    }
    if z.values().iter().any(|v| !v.is_finite()) {
        return Err(GaussError::NonFiniteInput);
    }
    let d = m.d();
    let mut y = vec![0.0f64; d];
    for i in 0..d {
        let mut s = z.values()[i] - m.mu[i];
        for (k, yk) in y.iter().enumerate().take(i) {
            s -= m.chol[[i, k]] * yk;
        }
        y[i] = s / m.chol[[i, i]];
    }
    Ok(MahalanobisScore(y.iter().map(|v| v * v).sum()))
}

/// Squared Euclidean distance of `z` to the model mean. The covariance-blind
/// contrast detector.
pub fn euclidean_sq(z: &PooledFeature, m: &GaussianModel) -> Result<f64, GaussError> {
    if z.d() != m.d() {
        return Err(GaussError::DimensionMismatch {
            expected: m.d(),
            actual: z.d(),
        });
    }
    Ok(z.values()
        .iter()
        .zip(m.mu.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum())
}

fn factorize_with_ridge(sigma: &Array2<f64>) -> Result<(Array2<f64>, f64), GaussError> {
    if let Some(chol) = cholesky_lower(sigma) {
        return Ok((chol, 0.0));
    }
    let d = sigma.nrows();
    let avg_var = sigma.diag().sum() / d as f64;
    // A zero-trace covariance (all samples identical) would make the ridge
    // vanish; fall back to an absolute ridge so the model stays usable.
    let mut epsilon = if avg_var > 0.0 {
        RIDGE_SCALE * avg_var
    } else {
        RIDGE_SCALE
    };
    for _ in 0..MAX_RIDGE_RETRIES {
        let mut ridged = sigma.clone();
        for i in 0..d {
            ridged[[i, i]] += epsilon;
        }
        if let Some(chol) = cholesky_lower(&ridged) {
            return Ok((chol, epsilon));
        }
        epsilon *= 10.0;
    }
    Err(GaussError::FactorizationFailure(MAX_RIDGE_RETRIES))
}

/// Plain lower-triangular Cholesky; `None` when a pivot is non-positive or
/// non-finite.
fn cholesky_lower(a: &Array2<f64>) -> Option<Array2<f64>> {
    let d = a.nrows();
    let mut l = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !s.is_finite() || s <= 0.0 {
                    return None;
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}
