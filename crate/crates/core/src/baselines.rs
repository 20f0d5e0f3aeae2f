//! Comparison uncertainty estimators operating on dumped network outputs.
//!
//! Four estimators cover the standard post-hoc families: inverted maximum
//! softmax probability, temperature-scaled softmax, KL divergence from the
//! uniform distribution, and the per-voxel spread of MC-dropout forward
//! passes. Each produces an [`UncertaintyMask`] over whole-image volumes;
//! subject scores and normalization reuse the aggregation path unchanged.
//!
//! All estimators emit values in [0, 1]. The three confidence-based ones are
//! inverted so that higher always means more uncertain.

use ndarray::{Array3, Array4};
use thiserror::Error;

use crate::aggregate::UncertaintyMask;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("softmax volume not normalized: voxel {voxel:?} sums to {sum}")]
    NotNormalized { voxel: [usize; 3], sum: f64 },
    #[error("probability outside [0,1] at voxel {voxel:?}: {value}")]
    OutOfRange { voxel: [usize; 3], value: f64 },
    #[error("volume contains non-finite values")]
    NonFiniteInput,
    #[error("need at least {expected} {what}, got {actual}")]
    TooFew {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("sample shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
}

const SUM_TOLERANCE: f64 = 1e-4;
const RANGE_TOLERANCE: f64 = 1e-6;

/// K-class per-voxel probabilities, class axis first.
#[derive(Debug, Clone)]
pub struct SoftmaxVolume {
    probs: Array4<f64>,
}

impl SoftmaxVolume {
    pub fn new(probs: Array4<f64>) -> Result<Self, BaselineError> {
        let (k, d, h, w) = probs.dim();
        if k < 2 {
            return Err(BaselineError::TooFew {
                what: "classes",
                expected: 2,
                actual: k,
            });
        }
        for di in 0..d {
            for hi in 0..h {
                for wi in 0..w {
                    let mut sum = 0.0;
                    for ki in 0..k {
                        let p = probs[[ki, di, hi, wi]];
                        if !p.is_finite() {
                            return Err(BaselineError::NonFiniteInput);
                        }
                        if !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&p) {
                            return Err(BaselineError::OutOfRange {
                                voxel: [di, hi, wi],
                                value: p,
                            });
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > SUM_TOLERANCE {
                        return Err(BaselineError::NotNormalized {
                            voxel: [di, hi, wi],
                            sum,
                        });
                    }
                }
            }
        }
        Ok(Self { probs })
    }

    pub fn k(&self) -> usize {
        self.probs.dim().0
    }

    pub fn probs(&self) -> &Array4<f64> {
        &self.probs
    }
}

/// K-class per-voxel raw network outputs, class axis first.
#[derive(Debug, Clone)]
pub struct LogitVolume {
    logits: Array4<f64>,
}

impl LogitVolume {
    pub fn new(logits: Array4<f64>) -> Result<Self, BaselineError> {
        let k = logits.dim().0;
        if k < 2 {
            return Err(BaselineError::TooFew {
                what: "classes",
                expected: 2,
                actual: k,
            });
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::NonFiniteInput);
        }
        Ok(Self { logits })
    }
}

/// Foreground-probability volumes from repeated stochastic forward passes.
#[derive(Debug, Clone)]
pub struct McSampleSet {
    samples: Vec<Array3<f64>>,
}

impl McSampleSet {
    pub fn new(samples: Vec<Array3<f64>>) -> Result<Self, BaselineError> {
        if samples.len() < 2 {
            return Err(BaselineError::TooFew {
                what: "samples",
                expected: 2,
                actual: samples.len(),
            });
        }
        let shape = samples[0].shape().to_vec();
        for s in &samples {
            if s.shape() != shape.as_slice() {
                return Err(BaselineError::ShapeMismatch(
                    shape.clone(),
                    s.shape().to_vec(),
                ));
            }
            for &v in s.iter() {
                if !v.is_finite() {
                    return Err(BaselineError::NonFiniteInput);
                }
                if !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&v) {
                    return Err(BaselineError::OutOfRange {
                        voxel: [0, 0, 0],
                        value: v,
                    });
                }
            }
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per voxel, `1 - max_k p_k`; zero for a fully confident prediction.
pub fn max_softmax_uncertainty(v: &SoftmaxVolume) -> UncertaintyMask {
    let (k, d, h, w) = v.probs.dim();
    let mut values = Array3::<f64>::zeros((d, h, w));
    for ((di, hi, wi), out) in values.indexed_iter_mut() {
        let max = (0..k)
            .map(|ki| v.probs[[ki, di, hi, wi]])
            .fold(f64::NEG_INFINITY, f64::max);
        *out = 1.0 - max;
    }
    UncertaintyMask { values }
}

/// Per voxel, softmax of `logits / T` (max-subtracted for stability), then
/// `1 - max_k p_k`.
pub fn temp_scaled_uncertainty(v: &LogitVolume, temperature: f64) -> UncertaintyMask {
    assert!(temperature > 0.0, "temperature must be positive");
    let (k, d, h, w) = v.logits.dim();
    let mut values = Array3::<f64>::zeros((d, h, w));
    let mut scaled = vec![0.0f64; k];
    for di in 0..d {
        for hi in 0..h {
            for wi in 0..w {
                for (ki, s) in scaled.iter_mut().enumerate() {
                    *s = v.logits[[ki, di, hi, wi]] / temperature;
                }
                let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for s in &scaled {
                    denom += (s - max).exp();
                }
                // max_k p_k = exp(0) / denom
                values[[di, hi, wi]] = 1.0 - 1.0 / denom;
            }
        }
    }
    UncertaintyMask { values }
}

/// How the per-voxel KL confidence is turned into an uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum KlInvert {
    /// `1 - KL / log K`, mapping the uniform voxel to 1 and one-hot to 0.
    #[default]
    Affine,
    /// `log K - KL`, the unnormalized entropy in nats.
    Negate,
}

/// Per voxel, the KL divergence of the prediction from the uniform
/// distribution (`log K - H(p)`, with `0 log 0 := 0`), inverted into an
/// uncertainty.
pub fn kl_from_uniform_uncertainty(v: &SoftmaxVolume, invert: KlInvert) -> UncertaintyMask {
    let (k, d, h, w) = v.probs.dim();
    let log_k = (k as f64).ln();
    let mut values = Array3::<f64>::zeros((d, h, w));
    for di in 0..d {
        for hi in 0..h {
            for wi in 0..w {
                let mut entropy = 0.0;
                for ki in 0..k {
                    let p = v.probs[[ki, di, hi, wi]].max(0.0);
                    if p > 0.0 {
                        entropy -= p * p.ln();
                    }
                }
                let kl = (log_k - entropy).max(0.0);
                values[[di, hi, wi]] = match invert {
                    KlInvert::Affine => 1.0 - kl / log_k,
                    KlInvert::Negate => log_k - kl,
                };
            }
        }
    }
    UncertaintyMask { values }
}

/// Per voxel, the population standard deviation of the foreground
/// probability across forward passes.
pub fn mc_dropout_uncertainty(s: &McSampleSet) -> UncertaintyMask {
    let dim = s.samples[0].dim();
    let n = s.samples.len() as f64;
    let mut mean = Array3::<f64>::zeros(dim);
    for sample in &s.samples {
        mean.zip_mut_with(sample, |m, &v| *m += v / n);
    }
    let mut var = Array3::<f64>::zeros(dim);
    for sample in &s.samples {
        ndarray::Zip::from(&mut var)
            .and(sample)
            .and(&mean)
            .for_each(|out, &v, &m| *out += (v - m) * (v - m) / n);
    }
    var.mapv_inplace(f64::sqrt);
    UncertaintyMask { values: var }
}

/// MC-dropout spread for multi-class sample volumes (class axis first): the
/// per-class population standard deviation, averaged over classes.
pub fn mc_dropout_uncertainty_multiclass(
    samples: &[Array4<f64>],
) -> Result<UncertaintyMask, BaselineError> {
    if samples.len() < 2 {
        return Err(BaselineError::TooFew {
            what: "samples",
            expected: 2,
            actual: samples.len(),
        });
    }
    let dim = samples[0].dim();
    for s in samples {
        if s.dim() != dim {
            return Err(BaselineError::ShapeMismatch(
                samples[0].shape().to_vec(),
                s.shape().to_vec(),
            ));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::NonFiniteInput);
        }
    }
    let (k, d, h, w) = dim;
    let n = samples.len() as f64;
    let mut mean = Array4::<f64>::zeros(dim);
    for s in samples {
        mean.zip_mut_with(s, |m, &v| *m += v / n);
    }
    let mut var = Array4::<f64>::zeros(dim);
    for s in samples {
        ndarray::Zip::from(&mut var)
            .and(s)
            .and(&mean)
            .for_each(|out, &v, &m| *out += (v - m) * (v - m) / n);
    }
    let mut values = Array3::<f64>::zeros((d, h, w));
    for ((di, hi, wi), out) in values.indexed_iter_mut() {
        let mut acc = 0.0;
        for ki in 0..k {
            acc += var[[ki, di, hi, wi]].sqrt();
        }
        *out = acc / k as f64;
    }
    Ok(UncertaintyMask { values })
}
