//! Sliding-window aggregation of per-patch scores into image-level
//! uncertainty masks, and reduction of masks to subject-level scores.
//!
//! Each patch contributes its scalar score replicated over the patch extent
//! and weighted by a separable center-emphasizing filter. Two accumulators
//! (weighted value and weight) are summed over all patches and divided
//! elementwise, so every voxel of the mask is a convex combination of the
//! scores of the patches covering it. Subject scores are plain voxel means,
//! normalized against the minimum and doubled maximum raw score of an
//! in-distribution validation set and clamped to [0, 1].

use ndarray::{s, Array1, Array3};
use thiserror::Error;

pub const DEFAULT_SIGMA_SCALE: f64 = 0.125;
const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("patch size {patch:?} exceeds image shape {image:?}")]
    PatchLargerThanImage {
        patch: [usize; 3],
        image: [usize; 3],
    },
    #[error("step {step:?} must be within [1, patch_size] componentwise (patch {patch:?})")]
    InvalidStep { step: [usize; 3], patch: [usize; 3] },
    #[error("{scores} patch scores for {origins} grid origins")]
    LengthMismatch { scores: usize, origins: usize },
    #[error("patch origin {0:?} plus patch size exceeds the image bounds")]
    OriginOutOfBounds([usize; 3]),
    #[error("patch scores must be finite and non-negative")]
    InvalidScore,
    #[error("voxel {0:?} is covered by no patch")]
    UncoveredVoxel([usize; 3]),
    #[error("degenerate normalization range: doubled max equals min ({0})")]
    DegenerateRange(f64),
    #[error("normalization requires a non-empty validation score set")]
    EmptyValidationSet,
}

/// The set of patch windows tiling one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    image_shape: [usize; 3],
    patch_size: [usize; 3],
    step: [usize; 3],
    origins: Vec<[usize; 3]>,
}

impl PatchGrid {
    /// Place origins at multiples of `step` per axis, clamping the final
    /// origin flush to the image boundary. `step` defaults to half the patch
    /// size (componentwise, at least 1).
    pub fn new(
        image_shape: [usize; 3],
        patch_size: [usize; 3],
        step: Option<[usize; 3]>,
    ) -> Result<Self, AggregateError> {
        for axis in 0..3 {
            if patch_size[axis] > image_shape[axis] || patch_size[axis] == 0 {
                return Err(AggregateError::PatchLargerThanImage {
                    patch: patch_size,
                    image: image_shape,
                });
            }
        }
        let step = step.unwrap_or([
            (patch_size[0] / 2).max(1),
            (patch_size[1] / 2).max(1),
            (patch_size[2] / 2).max(1),
        ]);
        for axis in 0..3 {
            if step[axis] == 0 || step[axis] > patch_size[axis] {
                return Err(AggregateError::InvalidStep {
                    step,
                    patch: patch_size,
                });
            }
        }
        let per_axis: Vec<Vec<usize>> = (0..3)
            .map(|a| axis_positions(image_shape[a], patch_size[a], step[a]))
            .collect();
        let mut origins = Vec::with_capacity(per_axis[0].len() * per_axis[1].len() * per_axis[2].len());
        for &o0 in &per_axis[0] {
            for &o1 in &per_axis[1] {
                for &o2 in &per_axis[2] {
                    origins.push([o0, o1, o2]);
                }
            }
        }
        Ok(Self {
            image_shape,
            patch_size,
            step,
            origins,
        })
    }

    /// Build a grid from an explicit origin list (the layout recorded in a
    /// dataset manifest). Origins are validated against the image bounds but
    /// kept in the given order.
    pub fn from_origins(
        image_shape: [usize; 3],
        patch_size: [usize; 3],
        origins: Vec<[usize; 3]>,
    ) -> Result<Self, AggregateError> {
        for axis in 0..3 {
            if patch_size[axis] > image_shape[axis] || patch_size[axis] == 0 {
                return Err(AggregateError::PatchLargerThanImage {
                    patch: patch_size,
                    image: image_shape,
                });
            }
        }
        for origin in &origins {
            for axis in 0..3 {
                if origin[axis] + patch_size[axis] > image_shape[axis] {
                    return Err(AggregateError::OriginOutOfBounds(*origin));
                }
            }
        }
        let step = [
            (patch_size[0] / 2).max(1),
            (patch_size[1] / 2).max(1),
            (patch_size[2] / 2).max(1),
        ];
        Ok(Self {
            image_shape,
            patch_size,
            step,
            origins,
        })
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn patch_size(&self) -> [usize; 3] {
        self.patch_size
    }

    pub fn step(&self) -> [usize; 3] {
        self.step
    }

    pub fn origins(&self) -> &[[usize; 3]] {
        &self.origins
    }
}

fn axis_positions(image: usize, patch: usize, step: usize) -> Vec<usize> {
    let last = image - patch;
    let mut positions = Vec::new();
    let mut pos = 0;
    loop {
        if pos >= last {
            positions.push(last);
            break;
        }
        positions.push(pos);
        pos += step;
    }
    positions
}

/// Per-voxel blending weights within a patch: a separable Gaussian bump,
/// max-normalized to 1 at the patch center and floored at a small positive
/// value so weighted averages stay well defined at patch corners.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterWeightFilter {
    pub weights: Array3<f64>,
}

impl CenterWeightFilter {
    pub fn shape(&self) -> [usize; 3] {
        let (a, b, c) = self.weights.dim();
        [a, b, c]
    }
}

/// Build the center-weight filter for a patch size. `sigma_scale` sets the
/// per-axis Gaussian width as a fraction of the patch extent.
pub fn make_filter(patch_size: [usize; 3], sigma_scale: f64) -> CenterWeightFilter {
    let axes: Vec<Array1<f64>> = patch_size
        .iter()
        .map(|&n| axis_kernel(n, sigma_scale))
        .collect();
    let mut weights = Array3::<f64>::zeros((patch_size[0], patch_size[1], patch_size[2]));
    for i in 0..patch_size[0] {
        for j in 0..patch_size[1] {
            for k in 0..patch_size[2] {
                weights[[i, j, k]] = (axes[0][i] * axes[1][j] * axes[2][k]).max(WEIGHT_FLOOR);
            }
        }
    }
    CenterWeightFilter { weights }
}

fn axis_kernel(n: usize, sigma_scale: f64) -> Array1<f64> {
    let sigma = sigma_scale * n as f64;
    let center = (n as f64 - 1.0) / 2.0;
    let mut k = Array1::from_shape_fn(n, |v| {
        let dist = v as f64 - center;
        (-dist * dist / (2.0 * sigma * sigma)).exp()
    });
    let max = k.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    k.mapv_inplace(|v| v / max);
    k
}

/// Voxel-level uncertainty volume in the original image geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMask {
    pub values: Array3<f64>,
}

/// Blend per-patch scores into an image-level mask: accumulate score-scaled
/// filter weights and raw filter weights over each patch extent, then divide.
pub fn build_uncertainty_mask(
    grid: &PatchGrid,
    patch_scores: &[f64],
    filter: &CenterWeightFilter,
) -> Result<UncertaintyMask, AggregateError> {
    if patch_scores.len() != grid.origins.len() {
        return Err(AggregateError::LengthMismatch {
            scores: patch_scores.len(),
            origins: grid.origins.len(),
        });
    }
    if patch_scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(AggregateError::InvalidScore);
    }
    let shape = grid.image_shape;
    let [p0, p1, p2] = grid.patch_size;
    if filter.shape() != grid.patch_size {
        return Err(AggregateError::LengthMismatch {
            scores: filter.weights.len(),
            origins: p0 * p1 * p2,
        });
    }
    let mut value = Array3::<f64>::zeros((shape[0], shape[1], shape[2]));
    let mut weight = Array3::<f64>::zeros((shape[0], shape[1], shape[2]));
    for (origin, &score) in grid.origins.iter().zip(patch_scores) {
        let [o0, o1, o2] = *origin;
        let mut v = value.slice_mut(s![o0..o0 + p0, o1..o1 + p1, o2..o2 + p2]);
        let mut w = weight.slice_mut(s![o0..o0 + p0, o1..o1 + p1, o2..o2 + p2]);
        v.zip_mut_with(&filter.weights, |acc, &f| *acc += score * f);
        w.zip_mut_with(&filter.weights, |acc, &f| *acc += f);
    }
    let mut uncovered = None;
    ndarray::Zip::indexed(&mut value)
        .and(&weight)
        .for_each(|(i, j, k), v, &w| {
            if w <= 0.0 {
                uncovered.get_or_insert([i, j, k]);
            } else {
                *v /= w;
            }
        });
    if let Some(voxel) = uncovered {
        return Err(AggregateError::UncoveredVoxel(voxel));
    }
    Ok(UncertaintyMask { values: value })
}

/// Subject-level uncertainty: the arithmetic mean over all mask voxels.
pub fn subject_score(mask: &UncertaintyMask) -> f64 {
    mask.values.iter().sum::<f64>() / mask.values.len() as f64
}

/// A subject's raw and normalized uncertainty.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubjectScore {
    pub subject_id: String,
    pub raw: f64,
    pub normalized: f64,
}

/// Map raw scores linearly from `[min(id_val), 2 * max(id_val)]` onto
/// `[0, 1]`, clamping values outside the range.
pub fn normalize_scores(
    raw: &[(String, f64)],
    id_val_raw: &[f64],
) -> Result<Vec<SubjectScore>, AggregateError> {
    let (lo, hi) = normalization_range(id_val_raw)?;
    Ok(raw
        .iter()
        .map(|(id, r)| SubjectScore {
            subject_id: id.clone(),
            raw: *r,
            normalized: ((r - lo) / (hi - lo)).clamp(0.0, 1.0),
        })
        .collect())
}

/// The `[min, 2 * max]` normalization interval of a validation score set.
pub fn normalization_range(id_val_raw: &[f64]) -> Result<(f64, f64), AggregateError> {
    if id_val_raw.is_empty() {
        return Err(AggregateError::EmptyValidationSet);
    }
    let lo = id_val_raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = 2.0 * id_val_raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(AggregateError::DegenerateRange(hi));
    }
    Ok((lo, hi))
}
