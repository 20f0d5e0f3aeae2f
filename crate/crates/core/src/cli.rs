//! Batch orchestration: fit on ID-train features, score every other subject
//! with the chosen method, evaluate against the labelled splits, and render
//! comparison tables.
//!
//! Subjects are processed in parallel with a configurable worker count; all
//! per-subject math is sequential and outputs are written to per-subject
//! files, so results are byte-identical at any worker count. Scoring
//! isolates per-subject failures: a corrupt input skips that subject and is
//! reported in the summary instead of aborting the batch.
//!
//! Normalization happens at evaluate time rather than score time, so one
//! scoring pass can be evaluated against different validation sets.

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::{self, AggregateError, PatchGrid, SubjectScore};
use crate::baselines::{self, BaselineError, KlInvert, LogitVolume, McSampleSet, SoftmaxVolume};
use crate::gauss::{self, GaussError, GaussianModel};
use crate::metrics::{self, DetectionReport, EvaluationRecord, MetricsError};
use crate::reduce::{self, ReduceError};
use crate::tensorio::{self, DatasetManifest, Split, SubjectEntry, TensorFile, TensorIoError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Tensor(#[from] TensorIoError),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Gauss(#[from] GaussError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("json failure: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no scores found for subjects: {}", .0.join(", "))]
    MissingScores(Vec<String>),
    #[error("subject {subject}: {detail}")]
    Subject { subject: String, detail: String },
    #[error("method {0} requires {1}")]
    MissingInput(String, &'static str),
    #[error("volume shape {got:?} does not match subject image shape {want:?}")]
    VolumeShape { got: Vec<usize>, want: [usize; 3] },
    #[error("{failed} of {total} subjects failed during scoring")]
    ScoreFailures { failed: usize, total: usize },
}

/// Uncertainty estimation method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mahalanobis,
    MaxSoftmax,
    TempScaling,
    KlUniform,
    McDropout,
}

impl Method {
    /// Stable identifier used in output file names and reports. Temperature
    /// scaling embeds its temperature, since each temperature is a distinct
    /// detector.
    pub fn file_tag(self, temperature: f64) -> String {
        match self {
            Method::Mahalanobis => "mahalanobis".into(),
            Method::MaxSoftmax => "max_softmax".into(),
            Method::TempScaling => format!("temp_scaling_t{}", format_temperature(temperature)),
            Method::KlUniform => "kl_uniform".into(),
            Method::McDropout => "mc_dropout".into(),
        }
    }
}

fn format_temperature(t: f64) -> String {
    if (t - t.round()).abs() < 1e-9 {
        format!("{}", t.round() as i64)
    } else {
        format!("{t}")
    }
}

/// Everything one pipeline invocation needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub model: PathBuf,
    pub method: Method,
    pub temperature: f64,
    pub sigma_scale: f64,
    pub target_tpr: f64,
    pub bins: usize,
    pub out: PathBuf,
    pub workers: usize,
    pub kl_invert: KlInvert,
}

impl RunConfig {
    pub fn new(manifest: PathBuf, model: PathBuf, out: PathBuf, method: Method) -> Self {
        Self {
            manifest,
            model,
            method,
            temperature: 100.0,
            sigma_scale: aggregate::DEFAULT_SIGMA_SCALE,
            target_tpr: 0.95,
            bins: 10,
            out,
            workers: 1,
            kl_invert: KlInvert::Affine,
        }
    }

    pub fn file_tag(&self) -> String {
        self.method.file_tag(self.temperature)
    }

    /// Hash of the semantic parameters (not paths or worker counts), so
    /// reports produced by identical configurations hash identically across
    /// machines.
    pub fn config_hash(&self) -> String {
        let semantic = serde_json::json!({
            "method": self.file_tag(),
            "temperature": self.temperature,
            "sigma_scale": self.sigma_scale,
            "target_tpr": self.target_tpr,
            "bins": self.bins,
            "kl_invert": self.kl_invert,
        });
        let digest = Sha256::digest(semantic.to_string().as_bytes());
        hex_prefix(&digest, 16)
    }
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub n_samples: usize,
    pub d: usize,
    pub epsilon: f64,
}

/// Pool every ID-train patch feature, fit the Gaussian, persist the model.
pub fn cmd_fit(config: &RunConfig) -> Result<FitSummary, CliError> {
    let manifest = tensorio::load_manifest(&config.manifest)?;
    let train: Vec<&SubjectEntry> = manifest.subjects_in(Split::IdTrain).collect();

    let pool = thread_pool(config.workers)?;
    let per_subject: Vec<Result<Vec<reduce::PooledFeature>, CliError>> = pool.install(|| {
        train
            .par_iter()
            .map(|subject| subject_features(subject, &manifest))
            .collect()
    });
    let mut samples = Vec::new();
    for (subject, result) in train.iter().zip(per_subject) {
        samples.extend(result.map_err(|e| CliError::Subject {
            subject: subject.id.clone(),
            detail: e.to_string(),
        })?);
    }

    let model = gauss::fit_gaussian(&samples, &manifest.pooling)?;
    model.save(&config.model)?;
    let summary = FitSummary {
        n_samples: model.n_samples(),
        d: model.d(),
        epsilon: model.epsilon(),
    };
    log::info!(
        "fitted gaussian: n_samples={} d={} epsilon={}",
        summary.n_samples,
        summary.d,
        summary.epsilon
    );
    Ok(summary)
}

fn subject_features(
    subject: &SubjectEntry,
    manifest: &DatasetManifest,
) -> Result<Vec<reduce::PooledFeature>, CliError> {
    let mut features = Vec::with_capacity(subject.feature_files.len());
    for path in &subject.feature_files {
        let tensor = tensorio::read_tensor(path)?;
        let array = reduce::feature_from_tensor(&tensor)?;
        features.push(reduce::reduce_to_vector(&array, &manifest.pooling)?);
    }
    Ok(features)
}

/// Per-subject sidecar written next to each uncertainty mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSidecar {
    pub subject_id: String,
    pub method: String,
    pub raw_score: f64,
    pub normalized_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ScoreSummary {
    pub scored: usize,
    pub failures: Vec<(String, String)>,
}

/// Score every non-train subject: write its uncertainty mask and raw
/// subject score. Failures are isolated per subject and reported in the
/// summary.
pub fn cmd_score(config: &RunConfig) -> Result<ScoreSummary, CliError> {
    let manifest = tensorio::load_manifest(&config.manifest)?;
    std::fs::create_dir_all(&config.out)?;
    let model = match config.method {
        Method::Mahalanobis => Some(GaussianModel::load(&config.model)?),
        _ => None,
    };
    let subjects: Vec<&SubjectEntry> = manifest
        .subjects
        .iter()
        .filter(|s| s.split != Split::IdTrain)
        .collect();

    let pool = thread_pool(config.workers)?;
    let results: Vec<Result<(), CliError>> = pool.install(|| {
        subjects
            .par_iter()
            .map(|subject| score_subject(subject, &manifest, model.as_ref(), config))
            .collect()
    });

    let mut failures = Vec::new();
    for (subject, result) in subjects.iter().zip(results) {
        if let Err(e) = result {
            log::warn!("subject {} failed: {e}", subject.id);
            failures.push((subject.id.clone(), e.to_string()));
        }
    }
    Ok(ScoreSummary {
        scored: subjects.len() - failures.len(),
        failures,
    })
}

fn score_subject(
    subject: &SubjectEntry,
    manifest: &DatasetManifest,
    model: Option<&GaussianModel>,
    config: &RunConfig,
) -> Result<(), CliError> {
    let mask = match config.method {
        Method::Mahalanobis => {
            let model = model.expect("model loaded for mahalanobis");
            if subject.feature_files.is_empty() {
                return Err(CliError::MissingInput(
                    "mahalanobis".into(),
                    "patch feature files",
                ));
            }
            let features = subject_features(subject, manifest)?;
            let mut scores = Vec::with_capacity(features.len());
            for f in &features {
                scores.push(gauss::mahalanobis(f, model)?.value());
            }
            let grid = PatchGrid::from_origins(
                subject.image_shape,
                manifest.patch_size,
                subject.patch_origins.clone(),
            )?;
            let filter = aggregate::make_filter(manifest.patch_size, config.sigma_scale);
            aggregate::build_uncertainty_mask(&grid, &scores, &filter)?
        }
        Method::MaxSoftmax => {
            let volume = load_softmax(subject)?;
            baselines::max_softmax_uncertainty(&volume)
        }
        Method::TempScaling => {
            let path = subject
                .logits_file
                .as_ref()
                .ok_or(CliError::MissingInput("temp_scaling".into(), "logits_file"))?;
            let logits = read_volume4(path, subject.image_shape)?;
            let volume = LogitVolume::new(logits)?;
            baselines::temp_scaled_uncertainty(&volume, config.temperature)
        }
        Method::KlUniform => {
            let volume = load_softmax(subject)?;
            baselines::kl_from_uniform_uncertainty(&volume, config.kl_invert)
        }
        Method::McDropout => {
            let files = subject
                .mc_sample_files
                .as_ref()
                .filter(|f| !f.is_empty())
                .ok_or(CliError::MissingInput(
                    "mc_dropout".into(),
                    "mc_sample_files",
                ))?;
            let first = tensorio::read_tensor(&files[0])?;
            if first.shape.len() == 4 {
                let mut samples = Vec::with_capacity(files.len());
                for f in files {
                    samples.push(read_volume4(f, subject.image_shape)?);
                }
                baselines::mc_dropout_uncertainty_multiclass(&samples)?
            } else {
                let mut samples = Vec::with_capacity(files.len());
                for f in files {
                    samples.push(read_volume3(f, subject.image_shape)?);
                }
                let set = McSampleSet::new(samples)?;
                baselines::mc_dropout_uncertainty(&set)
            }
        }
    };

    let raw = aggregate::subject_score(&mask);
    let tag = config.file_tag();
    let mask_path = config.out.join(mask_file_name(&subject.id, &tag));
    let values: Vec<f32> = mask.values.iter().map(|&v| v as f32).collect();
    let tensor = TensorFile::from_f32(subject.image_shape.to_vec(), values)?;
    tensorio::write_tensor(&tensor, &mask_path)?;
    let sidecar = ScoreSidecar {
        subject_id: subject.id.clone(),
        method: tag.clone(),
        raw_score: raw,
        normalized_score: None,
    };
    std::fs::write(
        sidecar_path(&config.out, &subject.id, &tag),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

fn load_softmax(subject: &SubjectEntry) -> Result<SoftmaxVolume, CliError> {
    let path = subject
        .softmax_file
        .as_ref()
        .ok_or(CliError::MissingInput("softmax".into(), "softmax_file"))?;
    let probs = read_volume4(path, subject.image_shape)?;
    Ok(SoftmaxVolume::new(probs)?)
}

fn mask_file_name(subject_id: &str, tag: &str) -> String {
    if tag == "mahalanobis" {
        format!("{subject_id}.uncertainty")
    } else {
        format!("{subject_id}.{tag}.uncertainty")
    }
}

fn sidecar_path(out: &Path, subject_id: &str, tag: &str) -> PathBuf {
    out.join(format!("{}.json", mask_file_name(subject_id, tag)))
}

fn read_volume3(path: &Path, image_shape: [usize; 3]) -> Result<Array3<f64>, CliError> {
    let t = tensorio::read_tensor(path)?;
    if t.shape != image_shape {
        return Err(CliError::VolumeShape {
            got: t.shape.clone(),
            want: image_shape,
        });
    }
    Ok(
        Array3::from_shape_vec((t.shape[0], t.shape[1], t.shape[2]), t.to_f64_vec())
            .expect("shape validated"),
    )
}

fn read_volume4(path: &Path, image_shape: [usize; 3]) -> Result<Array4<f64>, CliError> {
    let t = tensorio::read_tensor(path)?;
    if t.shape.len() != 4 || t.shape[1..] != image_shape {
        return Err(CliError::VolumeShape {
            got: t.shape.clone(),
            want: image_shape,
        });
    }
    Ok(Array4::from_shape_vec(
        (t.shape[0], t.shape[1], t.shape[2], t.shape[3]),
        t.to_f64_vec(),
    )
    .expect("shape validated"))
}

/// Report file written by [`cmd_evaluate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub method: String,
    pub config_hash: String,
    #[serde(flatten)]
    pub report: DetectionReport,
}

/// Normalize the stored raw scores against the ID-validation split, compute
/// the detection report, and write report JSON plus the scatter CSV.
pub fn cmd_evaluate(config: &RunConfig) -> Result<ReportFile, CliError> {
    let manifest = tensorio::load_manifest(&config.manifest)?;
    let tag = config.file_tag();

    let eval_subjects: Vec<&SubjectEntry> = manifest
        .subjects
        .iter()
        .filter(|s| s.split != Split::IdTrain)
        .collect();
    let mut missing = Vec::new();
    let mut raw_scores = Vec::new();
    for subject in &eval_subjects {
        let path = sidecar_path(&config.out, &subject.id, &tag);
        if !path.is_file() {
            missing.push(subject.id.clone());
            continue;
        }
        let sidecar: ScoreSidecar = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        raw_scores.push((subject.id.clone(), sidecar.raw_score));
    }
    if !missing.is_empty() {
        return Err(CliError::MissingScores(missing));
    }

    let id_val_raw: Vec<f64> = eval_subjects
        .iter()
        .zip(&raw_scores)
        .filter(|(s, _)| s.split == Split::IdVal)
        .map(|(_, (_, raw))| *raw)
        .collect();
    let normalized: Vec<SubjectScore> = aggregate::normalize_scores(&raw_scores, &id_val_raw)?;

    let mut records = Vec::with_capacity(eval_subjects.len());
    for (subject, score) in eval_subjects.iter().zip(&normalized) {
        let dice = match (&subject.prediction_file, &subject.groundtruth_file) {
            (Some(pred), Some(gt)) => {
                let p = metrics::binarize(&read_volume3(pred, subject.image_shape)?);
                let g = metrics::binarize(&read_volume3(gt, subject.image_shape)?);
                Some(metrics::dice(&p, &g)?)
            }
            _ => None,
        };
        records.push(EvaluationRecord {
            subject_id: subject.id.clone(),
            split: subject.split,
            normalized_uncertainty: score.normalized,
            dice,
        });
    }

    let id_val_normalized: Vec<f64> = records
        .iter()
        .filter(|r| r.split == Split::IdVal)
        .map(|r| r.normalized_uncertainty)
        .collect();
    let report = metrics::evaluate(&records, &id_val_normalized, config.target_tpr, config.bins)?;

    // fill in the normalized scores the sidecars could not know at score time
    for (subject, score) in eval_subjects.iter().zip(&normalized) {
        let path = sidecar_path(&config.out, &subject.id, &tag);
        let mut sidecar: ScoreSidecar = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        sidecar.normalized_score = Some(score.normalized);
        std::fs::write(&path, serde_json::to_string_pretty(&sidecar)?)?;
    }

    let report_file = ReportFile {
        method: tag.clone(),
        config_hash: config.config_hash(),
        report,
    };
    std::fs::write(
        config.out.join(format!("report.{tag}.json")),
        serde_json::to_string_pretty(&report_file)?,
    )?;
    std::fs::write(
        config.out.join(format!("scatter.{tag}.csv")),
        metrics::render_scatter_csv(&records, &tag),
    )?;
    Ok(report_file)
}

/// Render a per-method comparison table from report files.
pub fn cmd_report(report_paths: &[PathBuf]) -> Result<String, CliError> {
    let mut rows = Vec::new();
    for path in report_paths {
        let report: ReportFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        rows.push(report);
    }
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>10} {:>8} {:>8} {:>16}\n",
        "method", "det_error", "fpr", "esce", "dice"
    ));
    for r in &rows {
        let dice = match (r.report.admitted_dice_mean, r.report.admitted_dice_sd) {
            (Some(m), Some(s)) => format!("{m:.3} +/- {s:.3}"),
            _ => "n/a".into(),
        };
        let esce = r
            .report
            .esce
            .map(|e| format!("{e:.3}"))
            .unwrap_or_else(|| "n/a".into());
        out.push_str(&format!(
            "{:<24} {:>10.3} {:>8.3} {:>8} {:>16}\n",
            r.method, r.report.detection_error, r.report.fpr, esce, dice
        ));
    }
    Ok(out)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(std::io::Error::other(e)))
}
