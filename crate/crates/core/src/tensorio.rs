//! Tensor file and dataset manifest I/O.
//!
//! Tensors are stored in the `.npy` v1.0 container (magic `\x93NUMPY`,
//! ASCII header dict, little-endian payload, data aligned to a 64-byte
//! boundary) so any mainstream numerics stack can produce or consume them
//! without extra dependencies. Only `<f4` and `<f8` payloads in C order are
//! accepted; big-endian markers are rejected rather than converted.
//!
//! Manifests are UTF-8 JSON documents describing the subjects of a dataset:
//! per-subject patch feature files with their voxel origins, plus optional
//! softmax / logit / MC-sample / prediction / ground-truth volumes. All
//! referenced paths are checked for existence at load time so a batch job
//! fails before, not hours into, a run.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed tensor header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0:?} (only little-endian <f4 and <f8 are accepted)")]
    UnsupportedDtype(String),
    #[error("shape/data mismatch: header declares {expected} bytes of data, file holds {actual}")]
    ShapeDataMismatch { expected: usize, actual: usize },
    #[error("invalid tensor shape: {0}")]
    InvalidShape(String),
    #[error("manifest schema error: {0}")]
    SchemaError(String),
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("subject {subject}: {detail}")]
    GeometryError { subject: String, detail: String },
}

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    fn item_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Raw tensor payload, preserving the on-disk precision.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An n-dimensional array with its shape, as read from or written to disk.
///
/// Values are row-major (C order). A write→read round trip reproduces shape
/// and values bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self, TensorIoError> {
        Self::validate(&shape, values.len())?;
        Ok(Self {
            shape,
            data: TensorData::F32(values),
        })
    }

    pub fn from_f64(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorIoError> {
        Self::validate(&shape, values.len())?;
        Ok(Self {
            shape,
            data: TensorData::F64(values),
        })
    }

    fn validate(shape: &[usize], n_values: usize) -> Result<(), TensorIoError> {
        if shape.is_empty() {
            return Err(TensorIoError::InvalidShape("shape must be non-empty".into()));
        }
        if shape.contains(&0) {
            return Err(TensorIoError::InvalidShape(format!(
                "all dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != n_values {
            return Err(TensorIoError::InvalidShape(format!(
                "shape {shape:?} implies {expected} values, got {n_values}"
            )));
        }
        Ok(())
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values widened to f64, in row-major order.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

/// Read a tensor file, validating magic, version, header and payload size.
pub fn read_tensor(path: &Path) -> Result<TensorFile, TensorIoError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    read_exact_or(&mut reader, &mut magic, "file shorter than magic header")?;
    if &magic != NPY_MAGIC {
        return Err(TensorIoError::MalformedHeader(format!(
            "bad magic bytes {magic:?}"
        )));
    }
    let mut version = [0u8; 2];
    read_exact_or(&mut reader, &mut version, "file truncated before version")?;
    if version != [1, 0] {
        return Err(TensorIoError::MalformedHeader(format!(
            "unsupported container version {}.{}",
            version[0], version[1]
        )));
    }
    let mut len_bytes = [0u8; 2];
    read_exact_or(&mut reader, &mut len_bytes, "file truncated before header length")?;
    let header_len = u16::from_le_bytes(len_bytes) as usize;
    let mut header = vec![0u8; header_len];
    read_exact_or(&mut reader, &mut header, "file truncated inside header")?;
    let header = std::str::from_utf8(&header)
        .map_err(|_| TensorIoError::MalformedHeader("header is not ASCII/UTF-8".into()))?;

    let descr = extract_quoted_value(header, "descr")?;
    let dtype = match descr.as_str() {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        other => return Err(TensorIoError::UnsupportedDtype(other.to_string())),
    };
    let fortran = extract_bool_value(header, "fortran_order")?;
    if fortran {
        return Err(TensorIoError::MalformedHeader(
            "fortran_order=True is not supported (row-major only)".into(),
        ));
    }
    let shape = extract_shape_value(header)?;
    if shape.is_empty() {
        return Err(TensorIoError::MalformedHeader(
            "rank-0 (scalar) tensors are not supported".into(),
        ));
    }
    if shape.contains(&0) {
        return Err(TensorIoError::MalformedHeader(format!(
            "header declares a zero-sized dimension: {shape:?}"
        )));
    }

    let count: usize = shape.iter().product();
    let expected_bytes = count * dtype.item_size();
    let mut payload = Vec::with_capacity(expected_bytes);
    reader.read_to_end(&mut payload)?;
    if payload.len() != expected_bytes {
        return Err(TensorIoError::ShapeDataMismatch {
            expected: expected_bytes,
            actual: payload.len(),
        });
    }

    let data = match dtype {
        Dtype::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(TensorFile { shape, data })
}

/// Write a tensor file; the result is readable by [`read_tensor`] and by any
/// npy-compatible loader.
pub fn write_tensor(t: &TensorFile, path: &Path) -> Result<(), TensorIoError> {
    TensorFile::validate(&t.shape, t.len())?;
    let shape_str = match t.shape.len() {
        1 => format!("({},)", t.shape[0]),
        _ => format!(
            "({})",
            t.shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        t.dtype().descr(),
        shape_str
    );
    // magic(6) + version(2) + header_len(2) + dict + padding + '\n', total a
    // multiple of 64 so the payload starts 64-byte aligned.
    let prefix = NPY_MAGIC.len() + 2 + 2;
    let unpadded = prefix + dict.len() + 1;
    let padding = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + padding + 1;

    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(NPY_MAGIC)?;
    writer.write_all(&[1, 0])?;
    writer.write_all(&(header_len as u16).to_le_bytes())?;
    writer.write_all(dict.as_bytes())?;
    writer.write_all(&vec![b' '; padding])?;
    writer.write_all(b"\n")?;
    match &t.data {
        TensorData::F32(v) => {
            for x in v {
                writer.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::F64(v) => {
            for x in v {
                writer.write_all(&x.to_le_bytes())?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(
    reader: &mut R,
    buf: &mut [u8],
    context: &str,
) -> Result<(), TensorIoError> {
    reader
        .read_exact(buf)
        .map_err(|_| TensorIoError::MalformedHeader(context.to_string()))
}

fn extract_quoted_value(header: &str, key: &str) -> Result<String, TensorIoError> {
    let rest = find_key(header, key)?;
    let rest = rest.trim_start();
    let quote = rest
        .chars()
        .next()
        .filter(|&c| c == '\'' || c == '"')
        .ok_or_else(|| TensorIoError::MalformedHeader(format!("value of '{key}' is not quoted")))?;
    let rest = &rest[1..];
    let end = rest
        .find(quote)
        .ok_or_else(|| TensorIoError::MalformedHeader(format!("unterminated value for '{key}'")))?;
    Ok(rest[..end].to_string())
}

fn extract_bool_value(header: &str, key: &str) -> Result<bool, TensorIoError> {
    let rest = find_key(header, key)?.trim_start();
    if rest.starts_with("False") {
        Ok(false)
    } else if rest.starts_with("True") {
        Ok(true)
    } else {
        Err(TensorIoError::MalformedHeader(format!(
            "value of '{key}' is not a boolean"
        )))
    }
}

fn extract_shape_value(header: &str) -> Result<Vec<usize>, TensorIoError> {
    let rest = find_key(header, "shape")?.trim_start();
    if !rest.starts_with('(') {
        return Err(TensorIoError::MalformedHeader(
            "shape is not a tuple".into(),
        ));
    }
    let end = rest
        .find(')')
        .ok_or_else(|| TensorIoError::MalformedHeader("unterminated shape tuple".into()))?;
    rest[1..end]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>().map_err(|_| {
                TensorIoError::MalformedHeader(format!("shape entry {s:?} is not an integer"))
            })
        })
        .collect()
}

fn find_key<'a>(header: &'a str, key: &str) -> Result<&'a str, TensorIoError> {
    for quote in ['\'', '"'] {
        let pattern = format!("{quote}{key}{quote}");
        if let Some(pos) = header.find(&pattern) {
            let after = &header[pos + pattern.len()..];
            let after = after.trim_start();
            return after
                .strip_prefix(':')
                .ok_or_else(|| TensorIoError::MalformedHeader(format!("missing ':' after '{key}'")));
        }
    }
    Err(TensorIoError::MalformedHeader(format!(
        "header has no '{key}' key"
    )))
}

/// Dataset split a subject belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "ID_TRAIN")]
    IdTrain,
    #[serde(rename = "ID_VAL")]
    IdVal,
    #[serde(rename = "ID_TEST")]
    IdTest,
    #[serde(rename = "OOD")]
    Ood,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Split::IdTrain => "ID_TRAIN",
            Split::IdVal => "ID_VAL",
            Split::IdTest => "ID_TEST",
            Split::Ood => "OOD",
        };
        f.write_str(s)
    }
}

/// Feature-pooling configuration carried by the manifest and recorded in
/// fitted models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingConfig {
    #[serde(default = "default_kernel")]
    pub kernel: [usize; 3],
    #[serde(default = "default_kernel")]
    pub stride: [usize; 3],
    #[serde(default = "default_max_elements")]
    pub max_elements: usize,
}

fn default_kernel() -> [usize; 3] {
    [2, 2, 2]
}

fn default_max_elements() -> usize {
    10_000
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self {
            kernel: default_kernel(),
            stride: default_kernel(),
            max_elements: default_max_elements(),
        }
    }
}

/// One subject of a dataset, with all paths resolved to absolute form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub split: Split,
    pub image_shape: [usize; 3],
    #[serde(default)]
    pub feature_files: Vec<PathBuf>,
    #[serde(default)]
    pub patch_origins: Vec<[usize; 3]>,
    #[serde(default)]
    pub softmax_file: Option<PathBuf>,
    #[serde(default)]
    pub logits_file: Option<PathBuf>,
    #[serde(default)]
    pub mc_sample_files: Option<Vec<PathBuf>>,
    #[serde(default)]
    pub prediction_file: Option<PathBuf>,
    #[serde(default)]
    pub groundtruth_file: Option<PathBuf>,
}

/// A validated dataset description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub patch_size: [usize; 3],
    pub pooling: PoolingConfig,
    pub subjects: Vec<SubjectEntry>,
}

impl DatasetManifest {
    pub fn subjects_in(&self, split: Split) -> impl Iterator<Item = &SubjectEntry> {
        self.subjects.iter().filter(move |s| s.split == split)
    }
}

/// Load and validate a manifest. Relative paths are resolved against the
/// manifest's directory. Every invalid document yields a classified error;
/// a partially-built manifest is never returned.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, TensorIoError> {
    let text = std::fs::read_to_string(path)?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| TensorIoError::SchemaError(format!("{e}")))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    if manifest.patch_size.contains(&0) {
        return Err(TensorIoError::SchemaError(format!(
            "patch_size must be positive, got {:?}",
            manifest.patch_size
        )));
    }
    validate_pooling(&manifest.pooling)?;

    let mut ids = HashSet::new();
    for subject in &mut manifest.subjects {
        if !ids.insert(subject.id.clone()) {
            return Err(TensorIoError::SchemaError(format!(
                "duplicate subject id {:?}",
                subject.id
            )));
        }
        if subject.image_shape.contains(&0) {
            return Err(TensorIoError::SchemaError(format!(
                "subject {:?}: image_shape must be positive",
                subject.id
            )));
        }
        if subject.feature_files.len() != subject.patch_origins.len() {
            return Err(TensorIoError::SchemaError(format!(
                "subject {:?}: {} feature files but {} patch origins",
                subject.id,
                subject.feature_files.len(),
                subject.patch_origins.len()
            )));
        }
        for origin in &subject.patch_origins {
            for axis in 0..3 {
                if origin[axis] + manifest.patch_size[axis] > subject.image_shape[axis] {
                    return Err(TensorIoError::GeometryError {
                        subject: subject.id.clone(),
                        detail: format!(
                            "patch at origin {:?} exceeds image shape {:?} on axis {} \
                             (origin {} + patch {} > {})",
                            origin,
                            subject.image_shape,
                            axis,
                            origin[axis],
                            manifest.patch_size[axis],
                            subject.image_shape[axis]
                        ),
                    });
                }
            }
        }
        resolve_paths(base, &mut subject.feature_files)?;
        resolve_optional(base, &mut subject.softmax_file)?;
        resolve_optional(base, &mut subject.logits_file)?;
        if let Some(files) = &mut subject.mc_sample_files {
            resolve_paths(base, files)?;
        }
        resolve_optional(base, &mut subject.prediction_file)?;
        resolve_optional(base, &mut subject.groundtruth_file)?;
    }
    Ok(manifest)
}

fn validate_pooling(cfg: &PoolingConfig) -> Result<(), TensorIoError> {
    if cfg.kernel.contains(&0) || cfg.stride.contains(&0) {
        return Err(TensorIoError::SchemaError(format!(
            "pooling kernel/stride must be positive, got kernel {:?} stride {:?}",
            cfg.kernel, cfg.stride
        )));
    }
    if cfg.max_elements == 0 {
        return Err(TensorIoError::SchemaError(
            "pooling max_elements must be >= 1".into(),
        ));
    }
    Ok(())
}

fn resolve_paths(base: &Path, paths: &mut [PathBuf]) -> Result<(), TensorIoError> {
    for p in paths {
        resolve_path(base, p)?;
    }
    Ok(())
}

fn resolve_optional(base: &Path, path: &mut Option<PathBuf>) -> Result<(), TensorIoError> {
    if let Some(p) = path {
        resolve_path(base, p)?;
    }
    Ok(())
}

fn resolve_path(base: &Path, path: &mut PathBuf) -> Result<(), TensorIoError> {
    if path.is_relative() {
        *path = base.join(&path);
    }
    if !path.is_file() {
        return Err(TensorIoError::MissingFile(path.clone()));
    }
    Ok(())
}
