//! Seeded synthetic dataset generator with controllable distribution shift.
//!
//! Produces a complete on-disk dataset — manifest, per-patch feature
//! tensors, softmax/logit volumes, MC-dropout samples, predictions and
//! ground truths — so the whole pipeline runs hermetically. In-distribution
//! features are drawn from a random well-conditioned Gaussian; OOD features
//! from a mean-shifted, rotated and scaled variant of it. Segmentation
//! quality is tied to the true feature-space distance by construction:
//! subjects far from the training distribution receive low-Dice
//! predictions, so detection and calibration metrics are both exercised.
//!
//! The softmax, logit and MC-sample volumes deliberately carry no signal
//! about the shift: their statistics are drawn identically for ID and OOD
//! subjects. Output-based estimators therefore perform at chance on this
//! data, while the feature-space detector separates the populations.
//!
//! Generation is single-threaded and driven by one ChaCha8 stream seeded
//! from the spec, so a fixed spec reproduces every file byte for byte on
//! any platform.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::PatchGrid;
use crate::tensorio::{self, DatasetManifest, Split, TensorFile, TensorIoError};

/// Image geometry of every generated subject.
pub const IMAGE_SHAPE: [usize; 3] = [6, 12, 12];
/// Patch window used for feature extraction geometry.
pub const PATCH_SIZE: [usize; 3] = [4, 8, 8];
/// Half-overlap step between adjacent patches.
pub const PATCH_STEP: [usize; 3] = [2, 4, 4];

// Ground-truth lesion slab, and its voxel count.
const GT_LO: [usize; 3] = [1, 3, 3];
const GT_HI: [usize; 3] = [4, 9, 9];
const GT_VOXELS: usize = 108;

const EIGENVALUE_RANGE: (f64, f64) = (0.1, 10.0);
const MC_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
    #[error("internal geometry error: {0}")]
    Geometry(String),
}

/// Parameters of one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// Pooled feature dimensionality the pipeline should end up with.
    pub d: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_ood: usize,
    /// OOD mean displacement in units of the average marginal std.
    pub mean_shift: f64,
    /// Rotation angle (radians) applied to the OOD covariance basis.
    #[serde(default)]
    pub cov_rotation: f64,
    /// Multiplier on the OOD covariance scale.
    #[serde(default = "default_scale")]
    pub scale: f64,
    pub seed: u64,
}

fn default_scale() -> f64 {
    1.0
}

impl ShiftSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.d == 0 {
            return Err(SynthError::InvalidSpec("d must be >= 1".into()));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 || self.n_ood == 0 {
            return Err(SynthError::InvalidSpec(
                "all subject counts must be >= 1".into(),
            ));
        }
        if self.mean_shift < 0.0 || !self.mean_shift.is_finite() {
            return Err(SynthError::InvalidSpec(
                "mean_shift must be finite and >= 0".into(),
            ));
        }
        if self.scale <= 0.0 || !self.scale.is_finite() {
            return Err(SynthError::InvalidSpec("scale must be > 0".into()));
        }
        if !self.cov_rotation.is_finite() {
            return Err(SynthError::InvalidSpec("cov_rotation must be finite".into()));
        }
        Ok(())
    }
}

/// Per-subject generation record: the true population distance of the
/// subject's features and the Dice its synthetic prediction was built to
/// have. Written next to the manifest as `truth.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub true_distance: f64,
    pub dice: f64,
}

/// Generate a dataset under `out_dir` and return the validated manifest.
pub fn generate(spec: &ShiftSpec, out_dir: &Path) -> Result<DatasetManifest, SynthError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.d;

    // Training distribution: sigma0 = Q diag(lambda) Q^T with log-uniform
    // eigenvalues, condition number at most 100.
    let q = random_orthogonal(d, &mut rng);
    let lambda = Array1::from_shape_fn(d, |_| {
        let u: f64 = rng.gen_range(0.0..1.0);
        (EIGENVALUE_RANGE.0.ln() + u * (EIGENVALUE_RANGE.1 / EIGENVALUE_RANGE.0).ln()).exp()
    });
    let mu0 = Array1::from_shape_fn(d, |_| {
        let v: f64 = rng.sample(StandardNormal);
        v
    });
    // sampling factor A with A A^T = sigma0
    let mut factor_id = q.clone();
    for (j, col) in factor_id.columns_mut().into_iter().enumerate() {
        let s = lambda[j].sqrt();
        for v in col {
            *v *= s;
        }
    }

    // OOD displacement: random direction, length mean_shift * average
    // marginal std.
    let avg_std = (lambda.sum() / d as f64).sqrt();
    let mut delta = Array1::from_shape_fn(d, |_| {
        let v: f64 = rng.sample(StandardNormal);
        v
    });
    let norm = delta.dot(&delta).sqrt();
    delta.mapv_inplace(|v| v / norm * spec.mean_shift * avg_std);

    // OOD covariance basis: plane rotations through cov_rotation, scaled.
    let rotation = plane_rotation(d, spec.cov_rotation);
    let factor_ood = rotation.dot(&factor_id).mapv(|v| v * spec.scale);

    let grid = PatchGrid::new(IMAGE_SHAPE, PATCH_SIZE, Some(PATCH_STEP))
        .map_err(|e| SynthError::Geometry(e.to_string()))?;
    let origins: Vec<[usize; 3]> = grid.origins().to_vec();
    let patches_per_subject = origins.len();

    let mut subjects_json = Vec::new();
    let mut truth = BTreeMap::new();

    let groups: [(Split, &str, usize); 4] = [
        (Split::IdTrain, "train", spec.n_train),
        (Split::IdVal, "val", spec.n_val),
        (Split::IdTest, "test", spec.n_test),
        (Split::Ood, "ood", spec.n_ood),
    ];
    for (split, prefix, count) in groups {
        for idx in 0..count {
            let id = format!("{prefix}_{idx:04}");
            let subject_dir = out_dir.join(&id);
            std::fs::create_dir_all(&subject_dir)?;
            let ood = split == Split::Ood;

            // Patch features and their true population distances.
            let mut feature_files = Vec::with_capacity(patches_per_subject);
            let mut distance_sum = 0.0;
            for p in 0..patches_per_subject {
                let xi = Array1::from_shape_fn(d, |_| {
                    let v: f64 = rng.sample(StandardNormal);
                    v
                });
                let z = if ood {
                    &mu0 + &delta + factor_ood.dot(&xi)
                } else {
                    &mu0 + factor_id.dot(&xi)
                };
                distance_sum += population_distance(&z, &mu0, &q, &lambda);
                let rel = PathBuf::from(&id).join(format!("feat_{p:02}.npy"));
                write_feature_tensor(&z, &out_dir.join(&rel))?;
                feature_files.push(rel);
            }
            let mean_distance = distance_sum / patches_per_subject as f64;

            let mut entry = serde_json::json!({
                "id": id,
                "split": split,
                "image_shape": IMAGE_SHAPE,
                "feature_files": feature_files,
                "patch_origins": origins,
            });

            if split != Split::IdTrain {
                let quality = quality_from_distance(mean_distance, d);
                let dice = write_segmentation_pair(&id, quality, out_dir)?;
                let (softmax_rel, logits_rel) =
                    write_output_volumes(&id, out_dir, &mut rng)?;
                let mc_rels = write_mc_samples(&id, out_dir, &mut rng)?;
                let obj = entry.as_object_mut().expect("entry is an object");
                obj.insert("softmax_file".into(), serde_json::json!(softmax_rel));
                obj.insert("logits_file".into(), serde_json::json!(logits_rel));
                obj.insert("mc_sample_files".into(), serde_json::json!(mc_rels));
                obj.insert(
                    "prediction_file".into(),
                    serde_json::json!(PathBuf::from(&id).join("pred.npy")),
                );
                obj.insert(
                    "groundtruth_file".into(),
                    serde_json::json!(PathBuf::from(&id).join("gt.npy")),
                );
                truth.insert(
                    id.clone(),
                    SubjectTruth {
                        true_distance: mean_distance,
                        dice,
                    },
                );
            }
            subjects_json.push(entry);
        }
    }

    let manifest_json = serde_json::json!({
        "patch_size": PATCH_SIZE,
        "pooling": {
            "kernel": [2, 2, 2],
            "stride": [2, 2, 2],
            // one pooling pass over the stored (d,2,2,2) tensors lands at d
            "max_elements": 8 * d,
        },
        "subjects": subjects_json,
    });
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest_json).expect("manifest serializes"),
    )?;
    std::fs::write(
        out_dir.join("truth.json"),
        serde_json::to_string_pretty(&truth).expect("truth serializes"),
    )?;

    Ok(tensorio::load_manifest(&manifest_path)?)
}

/// Map a mean population distance to a target segmentation quality in
/// (0, 1), strictly decreasing. Centered so in-distribution subjects
/// (distance about d) land high and strongly shifted ones low.
fn quality_from_distance(mean_distance: f64, d: usize) -> f64 {
    let d = d as f64;
    1.0 / (1.0 + ((mean_distance - 1.5 * d) / (0.5 * d)).exp())
}

fn population_distance(
    z: &Array1<f64>,
    mu0: &Array1<f64>,
    q: &Array2<f64>,
    lambda: &Array1<f64>,
) -> f64 {
    let centered = z - mu0;
    let w = q.t().dot(&centered);
    w.iter()
        .zip(lambda.iter())
        .map(|(&wi, &li)| wi * wi / li)
        .sum()
}

/// Store a feature vector as a (d, 2, 2, 2) tensor whose spatial blocks are
/// constant, so one average-pooling pass recovers the vector exactly.
fn write_feature_tensor(z: &Array1<f64>, path: &Path) -> Result<(), SynthError> {
    let d = z.len();
    let mut values = Vec::with_capacity(d * 8);
    for &v in z.iter() {
        let v32 = v as f32;
        values.extend_from_slice(&[v32; 8]);
    }
    let t = TensorFile::from_f32(vec![d, 2, 2, 2], values)?;
    tensorio::write_tensor(&t, path)?;
    Ok(())
}

/// Write the ground-truth slab and a prediction overlapping it in exactly
/// `round(quality * |GT|)` voxels; returns the resulting Dice.
fn write_segmentation_pair(
    id: &str,
    quality: f64,
    out_dir: &Path,
) -> Result<f64, SynthError> {
    let total = IMAGE_SHAPE[0] * IMAGE_SHAPE[1] * IMAGE_SHAPE[2];
    let inside = |i: usize, j: usize, k: usize| {
        i >= GT_LO[0] && i < GT_HI[0] && j >= GT_LO[1] && j < GT_HI[1] && k >= GT_LO[2] && k < GT_HI[2]
    };
    let mut gt = vec![0.0f32; total];
    let mut gt_voxels = Vec::with_capacity(GT_VOXELS);
    let mut outside_voxels = Vec::new();
    let mut flat = 0usize;
    for i in 0..IMAGE_SHAPE[0] {
        for j in 0..IMAGE_SHAPE[1] {
            for k in 0..IMAGE_SHAPE[2] {
                if inside(i, j, k) {
                    gt[flat] = 1.0;
                    gt_voxels.push(flat);
                } else {
                    outside_voxels.push(flat);
                }
                flat += 1;
            }
        }
    }
    if gt_voxels.len() != GT_VOXELS {
        return Err(SynthError::Geometry(format!(
            "ground-truth slab has {} voxels, expected {GT_VOXELS}",
            gt_voxels.len()
        )));
    }

    let overlap = (quality * GT_VOXELS as f64).round() as usize;
    let overlap = overlap.min(GT_VOXELS);
    let mut pred = vec![0.0f32; total];
    for &v in gt_voxels.iter().take(overlap) {
        pred[v] = 1.0;
    }
    for &v in outside_voxels.iter().take(GT_VOXELS - overlap) {
        pred[v] = 1.0;
    }

    let shape = IMAGE_SHAPE.to_vec();
    tensorio::write_tensor(
        &TensorFile::from_f32(shape.clone(), gt)?,
        &out_dir.join(id).join("gt.npy"),
    )?;
    tensorio::write_tensor(
        &TensorFile::from_f32(shape, pred)?,
        &out_dir.join(id).join("pred.npy"),
    )?;
    Ok(overlap as f64 / GT_VOXELS as f64)
}

/// Softmax and logit volumes with per-voxel foreground probability drawn
/// identically for every split, so they carry no shift information.
fn write_output_volumes(
    id: &str,
    out_dir: &Path,
    rng: &mut ChaCha8Rng,
) -> Result<(PathBuf, PathBuf), SynthError> {
    let total = IMAGE_SHAPE[0] * IMAGE_SHAPE[1] * IMAGE_SHAPE[2];
    let mut softmax = vec![0.0f32; 2 * total];
    let mut logits = vec![0.0f32; 2 * total];
    for v in 0..total {
        let noise: f64 = rng.sample(StandardNormal);
        let fg = (0.5 + 0.1 * noise).clamp(0.05, 0.95);
        let bg = 1.0 - fg;
        softmax[v] = bg as f32;
        softmax[total + v] = fg as f32;
        logits[v] = bg.ln() as f32;
        logits[total + v] = fg.ln() as f32;
    }
    let shape = vec![2, IMAGE_SHAPE[0], IMAGE_SHAPE[1], IMAGE_SHAPE[2]];
    let softmax_rel = PathBuf::from(id).join("softmax.npy");
    let logits_rel = PathBuf::from(id).join("logits.npy");
    tensorio::write_tensor(
        &TensorFile::from_f32(shape.clone(), softmax)?,
        &out_dir.join(&softmax_rel),
    )?;
    tensorio::write_tensor(
        &TensorFile::from_f32(shape, logits)?,
        &out_dir.join(&logits_rel),
    )?;
    Ok((softmax_rel, logits_rel))
}

/// MC forward passes: a per-subject noise level (drawn independently of the
/// split) around a common base volume.
fn write_mc_samples(
    id: &str,
    out_dir: &Path,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PathBuf>, SynthError> {
    let total = IMAGE_SHAPE[0] * IMAGE_SHAPE[1] * IMAGE_SHAPE[2];
    let noise_sd: f64 = rng.gen_range(0.02..0.06);
    let base: Vec<f64> = (0..total)
        .map(|_| {
            let n: f64 = rng.sample(StandardNormal);
            (0.5 + 0.05 * n).clamp(0.05, 0.95)
        })
        .collect();
    let mut rels = Vec::with_capacity(MC_SAMPLES);
    for s in 0..MC_SAMPLES {
        let values: Vec<f32> = base
            .iter()
            .map(|&b| {
                let n: f64 = rng.sample(StandardNormal);
                (b + noise_sd * n).clamp(0.0, 1.0) as f32
            })
            .collect();
        let rel = PathBuf::from(id).join(format!("mc_{s:02}.npy"));
        tensorio::write_tensor(
            &TensorFile::from_f32(IMAGE_SHAPE.to_vec(), values)?,
            &out_dir.join(&rel),
        )?;
        rels.push(rel);
    }
    Ok(rels)
}

/// Random orthogonal matrix via modified Gram-Schmidt on a Gaussian matrix.
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((d, d), |_| {
        let v: f64 = rng.sample(StandardNormal);
        v
    });
    for j in 0..d {
        for prev in 0..j {
            let dot = {
                let cur = m.column(j);
                let p = m.column(prev);
                cur.dot(&p)
            };
            let prev_col = m.column(prev).to_owned();
            let mut cur = m.column_mut(j);
            cur.zip_mut_with(&prev_col, |c, &p| *c -= dot * p);
        }
        let norm = m.column(j).dot(&m.column(j)).sqrt();
        let mut cur = m.column_mut(j);
        cur.mapv_inplace(|v| v / norm);
    }
    m
}

/// Block-diagonal rotation: disjoint coordinate planes (0,1), (2,3), ...
/// each rotated by `angle`.
fn plane_rotation(d: usize, angle: f64) -> Array2<f64> {
    let mut r = Array2::eye(d);
    let (sin, cos) = angle.sin_cos();
    let mut i = 0;
    while i + 1 < d {
        r[[i, i]] = cos;
        r[[i, i + 1]] = -sin;
        r[[i + 1, i]] = sin;
        r[[i + 1, i + 1]] = cos;
        i += 2;
    }
    r
}
