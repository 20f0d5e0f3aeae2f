//! Detection and calibration metrics over labelled subject scores.
//!
//! The operating point is the smallest observed validation score admitting
//! at least the target fraction of validation subjects (nearest-rank, no
//! interpolation). Detection error combines the miss rate on ID test data
//! with the false-positive rate on OOD data at that boundary. Calibration is
//! summarized by the expected segmentation calibration error: subjects are
//! binned by normalized uncertainty into equal-width bins and the weighted
//! absolute gap between mean Dice and inverse mean uncertainty is summed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ndarray::Array3;

use crate::tensorio::Split;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("mask shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("record {0} has no Dice value")]
    MissingDice(String),
    #[error("records must contain at least one {0} entry")]
    MissingSplit(&'static str),
    #[error("invalid target TPR {0}; must be in (0, 1]")]
    InvalidTargetTpr(f64),
    #[error("bin count must be >= 1")]
    InvalidBinCount,
}

/// One subject's evaluation inputs: split label, normalized uncertainty and
/// (when ground truth exists) segmentation Dice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub subject_id: String,
    pub split: Split,
    pub normalized_uncertainty: f64,
    pub dice: Option<f64>,
}

/// Detection and calibration summary at the chosen boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub boundary: f64,
    pub tpr_val: f64,
    pub tpr_test: f64,
    pub fpr: f64,
    pub detection_error: f64,
    /// Absent when the dataset carries no ground truth at all.
    pub esce: Option<f64>,
    pub admitted_dice_mean: Option<f64>,
    pub admitted_dice_sd: Option<f64>,
    pub n_id_test: usize,
    pub n_ood: usize,
}

/// Smallest observed score `t` such that at least `target_tpr` of the
/// validation scores are `<= t`. Samples scoring `<= t` classify as ID.
pub fn tpr_boundary(id_val_scores: &[f64], target_tpr: f64) -> Result<f64, MetricsError> {
    if id_val_scores.is_empty() {
        return Err(MetricsError::EmptyInput("validation scores"));
    }
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(MetricsError::InvalidTargetTpr(target_tpr));
    }
    let mut sorted = id_val_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores must not be NaN"));
    let n = sorted.len();
    let rank = (target_tpr * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// `0.5 * (1 - TPR) + 0.5 * FPR`.
pub fn detection_error(tpr: f64, fpr: f64) -> f64 {
    0.5 * (1.0 - tpr) + 0.5 * fpr
}

/// Fraction of OOD scores admitted as ID (`score <= boundary`).
pub fn fpr_at_boundary(ood_scores: &[f64], boundary: f64) -> Result<f64, MetricsError> {
    if ood_scores.is_empty() {
        return Err(MetricsError::EmptyInput("OOD scores"));
    }
    let admitted = ood_scores.iter().filter(|&&s| s <= boundary).count();
    Ok(admitted as f64 / ood_scores.len() as f64)
}

fn tpr_at_boundary(id_scores: &[f64], boundary: f64) -> Result<f64, MetricsError> {
    if id_scores.is_empty() {
        return Err(MetricsError::EmptyInput("ID scores"));
    }
    let admitted = id_scores.iter().filter(|&&s| s <= boundary).count();
    Ok(admitted as f64 / id_scores.len() as f64)
}

/// Dice overlap of two binary masks; two empty masks count as a perfect
/// match.
pub fn dice(pred: &Array3<bool>, gt: &Array3<bool>) -> Result<f64, MetricsError> {
    if pred.shape() != gt.shape() {
        return Err(MetricsError::ShapeMismatch(
            pred.shape().to_vec(),
            gt.shape().to_vec(),
        ));
    }
    let mut intersection = 0usize;
    let mut p_count = 0usize;
    let mut g_count = 0usize;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        p_count += p as usize;
        g_count += g as usize;
        intersection += (p && g) as usize;
    }
    if p_count + g_count == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * intersection as f64 / (p_count + g_count) as f64)
}

/// Binarize a real-valued volume at 0.5, the convention for stored 0/1
/// masks.
pub fn binarize(volume: &Array3<f64>) -> Array3<bool> {
    volume.mapv(|v| v > 0.5)
}

/// Expected segmentation calibration error over `bins` equal-width
/// uncertainty bins (last bin closed). Every record must carry a Dice value.
pub fn esce(records: &[EvaluationRecord], bins: usize) -> Result<f64, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::InvalidBinCount);
    }
    if records.is_empty() {
        return Err(MetricsError::EmptyInput("records"));
    }
    let mut dice_sum = vec![0.0f64; bins];
    let mut unc_sum = vec![0.0f64; bins];
    let mut count = vec![0usize; bins];
    for r in records {
        let d = r
            .dice
            .ok_or_else(|| MetricsError::MissingDice(r.subject_id.clone()))?;
        let u = r.normalized_uncertainty;
        let idx = ((u * bins as f64).floor() as usize).min(bins - 1);
        dice_sum[idx] += d;
        unc_sum[idx] += u;
        count[idx] += 1;
    }
    let n = records.len() as f64;
    let mut total = 0.0;
    for m in 0..bins {
        if count[m] == 0 {
            continue;
        }
        let mean_dice = dice_sum[m] / count[m] as f64;
        let mean_unc = unc_sum[m] / count[m] as f64;
        total += (count[m] as f64 / n) * (mean_dice - (1.0 - mean_unc)).abs();
    }
    Ok(total)
}

/// Run the full evaluation: boundary selection on validation scores, TPR /
/// FPR / detection error on test and OOD records, calibration error over
/// their union, and the Dice statistics of admitted subjects.
pub fn evaluate(
    records: &[EvaluationRecord],
    id_val_scores: &[f64],
    target_tpr: f64,
    bins: usize,
) -> Result<DetectionReport, MetricsError> {
    let id_test: Vec<&EvaluationRecord> = records
        .iter()
        .filter(|r| r.split == Split::IdTest)
        .collect();
    let ood: Vec<&EvaluationRecord> =
        records.iter().filter(|r| r.split == Split::Ood).collect();
    if id_test.is_empty() {
        return Err(MetricsError::MissingSplit("ID_TEST"));
    }
    if ood.is_empty() {
        return Err(MetricsError::MissingSplit("OOD"));
    }

    let boundary = tpr_boundary(id_val_scores, target_tpr)?;
    let tpr_val = tpr_at_boundary(id_val_scores, boundary)?;
    let test_scores: Vec<f64> = id_test.iter().map(|r| r.normalized_uncertainty).collect();
    let ood_scores: Vec<f64> = ood.iter().map(|r| r.normalized_uncertainty).collect();
    let tpr_test = tpr_at_boundary(&test_scores, boundary)?;
    let fpr = fpr_at_boundary(&ood_scores, boundary)?;

    let eval_pool: Vec<EvaluationRecord> = id_test
        .iter()
        .chain(ood.iter())
        .map(|r| (*r).clone())
        .collect();
    // Calibration needs ground truth. A dataset entirely without it still
    // gets detection metrics; a partially annotated one is an error rather
    // than a silently re-weighted calibration sum.
    let esce_value = if eval_pool.iter().all(|r| r.dice.is_none()) {
        None
    } else {
        Some(esce(&eval_pool, bins)?)
    };

    let admitted: Vec<f64> = eval_pool
        .iter()
        .filter(|r| r.normalized_uncertainty <= boundary)
        .filter_map(|r| r.dice)
        .collect();
    let (admitted_dice_mean, admitted_dice_sd) = if admitted.is_empty() {
        (None, None)
    } else {
        let mean = admitted.iter().sum::<f64>() / admitted.len() as f64;
        let var = admitted.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / admitted.len() as f64;
        (Some(mean), Some(var.sqrt()))
    };

    Ok(DetectionReport {
        boundary,
        tpr_val,
        tpr_test,
        fpr,
        detection_error: detection_error(tpr_test, fpr),
        esce: esce_value,
        admitted_dice_mean,
        admitted_dice_sd,
        n_id_test: id_test.len(),
        n_ood: ood.len(),
    })
}

/// Render the per-subject scatter data (Dice against normalized uncertainty)
/// as CSV with LF line endings.
pub fn render_scatter_csv(records: &[EvaluationRecord], method: &str) -> String {
    let mut out = String::from("subject_id,split,method,normalized_uncertainty,dice\n");
    for r in records {
        let dice_field = r.dice.map(|d| d.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.subject_id, r.split, method, r.normalized_uncertainty, dice_field
        ));
    }
    out
}
