//! Projection of per-patch encoder features into low-dimensional vectors.
//!
//! Encoder activations are far too large for covariance estimation, so each
//! feature tensor is average-pooled over its spatial axes until the total
//! element count falls below a threshold, then flattened row-major. Edge
//! windows that extend past a boundary average only the in-bounds elements;
//! no padding value ever enters a mean. When the spatial axes are exhausted
//! (all of size 1) and the tensor is still too large, adjacent channel pairs
//! are pooled instead, so the dimensionality contract holds for any input.

use ndarray::Array4;
use thiserror::Error;

use crate::tensorio::{PoolingConfig, TensorFile};

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("feature tensor contains non-finite values")]
    NonFiniteInput,
    #[error("feature tensor must have 4 dimensions (C,D,H,W), got shape {0:?}")]
    BadRank(Vec<usize>),
}

/// A flattened, pooled feature vector; the representation the Gaussian is
/// fitted over and scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    values: Vec<f64>,
}

impl PooledFeature {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Interpret a stored tensor as a C×D×H×W feature tensor.
pub fn feature_from_tensor(t: &TensorFile) -> Result<Array4<f64>, ReduceError> {
    if t.shape.len() != 4 {
        return Err(ReduceError::BadRank(t.shape.clone()));
    }
    let shape = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    Ok(Array4::from_shape_vec(shape, t.to_f64_vec()).expect("shape validated by tensorio"))
}

/// One average-pooling pass over the three spatial axes. The channel axis is
/// untouched; output spatial extent is `ceil(dim / stride)` per axis.
pub fn avg_pool_once(t: &Array4<f64>, cfg: &PoolingConfig) -> Result<Array4<f64>, ReduceError> {
    check_finite(t)?;
    let (c, d, h, w) = t.dim();
    let out_d = div_ceil(d, cfg.stride[0]);
    let out_h = div_ceil(h, cfg.stride[1]);
    let out_w = div_ceil(w, cfg.stride[2]);
    let mut out = Array4::<f64>::zeros((c, out_d, out_h, out_w));
    for ci in 0..c {
        for od in 0..out_d {
            let (d0, d1) = window(od, cfg.stride[0], cfg.kernel[0], d);
            for oh in 0..out_h {
                let (h0, h1) = window(oh, cfg.stride[1], cfg.kernel[1], h);
                for ow in 0..out_w {
                    let (w0, w1) = window(ow, cfg.stride[2], cfg.kernel[2], w);
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for di in d0..d1 {
                        for hi in h0..h1 {
                            for wi in w0..w1 {
                                sum += t[[ci, di, hi, wi]];
                                count += 1;
                            }
                        }
                    }
                    out[[ci, od, oh, ow]] = sum / count as f64;
                }
            }
        }
    }
    Ok(out)
}

/// Pool adjacent channel pairs (kernel 2, stride 2, truncated edge). Used
/// only when the spatial axes have been reduced to size 1 and the tensor is
/// still above the element threshold.
fn pool_channels(t: &Array4<f64>) -> Array4<f64> {
    let (c, d, h, w) = t.dim();
    let out_c = div_ceil(c, 2);
    let mut out = Array4::<f64>::zeros((out_c, d, h, w));
    for oc in 0..out_c {
        let c0 = oc * 2;
        let c1 = (c0 + 2).min(c);
        for di in 0..d {
            for hi in 0..h {
                for wi in 0..w {
                    let mut sum = 0.0;
                    for ci in c0..c1 {
                        sum += t[[ci, di, hi, wi]];
                    }
                    out[[oc, di, hi, wi]] = sum / (c1 - c0) as f64;
                }
            }
        }
    }
    out
}

/// Pool a feature tensor until its element count drops below
/// `cfg.max_elements`, then flatten row-major.
pub fn reduce_to_vector(
    t: &Array4<f64>,
    cfg: &PoolingConfig,
) -> Result<PooledFeature, ReduceError> {
    check_finite(t)?;
    let mut current = t.clone();
    while current.len() >= cfg.max_elements && has_spatial_extent(&current) {
        current = avg_pool_once(&current, cfg)?;
    }
    while current.len() >= cfg.max_elements && current.dim().0 > 1 {
        current = pool_channels(&current);
    }
    Ok(PooledFeature::new(current.iter().copied().collect()))
}

fn has_spatial_extent(t: &Array4<f64>) -> bool {
    let (_, d, h, w) = t.dim();
    d > 1 || h > 1 || w > 1
}

fn window(out_idx: usize, stride: usize, kernel: usize, dim: usize) -> (usize, usize) {
    let start = out_idx * stride;
    (start, (start + kernel).min(dim))
}

fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

fn check_finite(t: &Array4<f64>) -> Result<(), ReduceError> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ReduceError::NonFiniteInput)
    }
}
