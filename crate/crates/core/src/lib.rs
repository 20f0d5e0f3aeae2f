//! Post-hoc out-of-distribution detection and uncertainty calibration for
//! patch-based segmentation pipelines.
//!
//! The engine fits a multivariate Gaussian to pooled encoder features of
//! in-distribution training patches, scores new subjects by the squared
//! Mahalanobis distance in that feature space, blends per-patch scores into
//! voxel-level uncertainty masks with a center-weighted sliding-window
//! scheme, and reduces masks to normalized subject-level scores. Four
//! reference uncertainty estimators (max softmax, temperature scaling,
//! KL from uniform, MC-dropout spread) run on dumped network outputs through
//! the same aggregation and normalization path, and an evaluation suite
//! computes detection and calibration metrics over labelled subject sets.
//!
//! Pipeline stages map onto modules:
//!
//! - [`tensorio`]: tensor files (`.npy` interoperable) and dataset manifests
//! - [`reduce`]: average-pooling projection of encoder features to vectors
//! - [`gauss`]: Gaussian fit and Mahalanobis / Euclidean scoring
//! - [`aggregate`]: patch grids, center-weight filters, uncertainty masks,
//!   subject scores and score normalization
//! - [`baselines`]: the four comparison estimators
//! - [`metrics`]: TPR boundary, FPR, detection error, Dice, calibration error
//! - [`synth`]: seeded synthetic dataset generator with controllable shift
//! - [`cli`]: batch orchestration used by the `patchood` binary

pub mod aggregate;
pub mod baselines;
pub mod cli;
pub mod gauss;
pub mod metrics;
pub mod reduce;
pub mod synth;
pub mod tensorio;
