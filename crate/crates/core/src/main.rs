use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use patchood::baselines::KlInvert;
use patchood::cli::{self, Method, RunConfig};
use patchood::synth::{self, ShiftSpec};

#[derive(Parser)]
#[command(
    name = "patchood",
    version,
    about = "Feature-space OOD detection and uncertainty calibration for patch-based segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the training-feature Gaussian from all ID_TRAIN patches.
    Fit {
        #[arg(long, env = "PATCHOOD_MANIFEST")]
        manifest: PathBuf,
        /// Output model directory.
        #[arg(long, env = "PATCHOOD_MODEL")]
        model: PathBuf,
        #[arg(long, default_value_t = 1, env = "PATCHOOD_WORKERS")]
        workers: usize,
    },
    /// Score every non-train subject: write uncertainty masks + raw scores.
    Score {
        #[arg(long, env = "PATCHOOD_MANIFEST")]
        manifest: PathBuf,
        /// Model directory (required for --method mahalanobis).
        #[arg(long, env = "PATCHOOD_MODEL")]
        model: Option<PathBuf>,
        #[arg(long, value_enum, env = "PATCHOOD_METHOD")]
        method: Method,
        /// Softmax temperature for --method temp-scaling.
        #[arg(long, default_value_t = 100.0, env = "PATCHOOD_TEMPERATURE")]
        temperature: f64,
        /// Center-weight filter width as a fraction of the patch size.
        #[arg(long, default_value_t = 0.125, env = "PATCHOOD_SIGMA_SCALE")]
        sigma_scale: f64,
        /// How KL-from-uniform confidence is inverted into uncertainty.
        #[arg(long, value_enum, default_value = "affine", env = "PATCHOOD_KL_INVERT")]
        kl_invert: KlInvertArg,
        #[arg(long, env = "PATCHOOD_OUT")]
        out: PathBuf,
        #[arg(long, default_value_t = 1, env = "PATCHOOD_WORKERS")]
        workers: usize,
    },
    /// Normalize scores against ID_VAL and compute the detection report.
    Evaluate {
        #[arg(long, env = "PATCHOOD_MANIFEST")]
        manifest: PathBuf,
        #[arg(long, value_enum, env = "PATCHOOD_METHOD")]
        method: Method,
        #[arg(long, default_value_t = 100.0, env = "PATCHOOD_TEMPERATURE")]
        temperature: f64,
        #[arg(long, default_value_t = 0.95, env = "PATCHOOD_TARGET_TPR")]
        target_tpr: f64,
        /// Calibration bin count.
        #[arg(long, default_value_t = 10, env = "PATCHOOD_BINS")]
        bins: usize,
        /// Directory holding the score outputs; receives report + CSV.
        #[arg(long, env = "PATCHOOD_OUT")]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with controllable distribution shift.
    Synth {
        /// JSON file with the generation parameters.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the seed in the spec file.
        #[arg(long, env = "PATCHOOD_SEED")]
        seed: Option<u64>,
    },
    /// Render a comparison table from one or more report JSON files.
    Report {
        /// report.<method>.json files produced by `evaluate`.
        reports: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum KlInvertArg {
    Affine,
    Negate,
}

impl From<KlInvertArg> for KlInvert {
    fn from(value: KlInvertArg) -> Self {
        match value {
            KlInvertArg::Affine => KlInvert::Affine,
            KlInvertArg::Negate => KlInvert::Negate,
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Fit {
            manifest,
            model,
            workers,
        } => {
            let mut config = RunConfig::new(manifest, model, PathBuf::new(), Method::Mahalanobis);
            config.workers = workers;
            let summary = cli::cmd_fit(&config)?;
            println!(
                "fit: n_samples={} d={} epsilon={}",
                summary.n_samples, summary.d, summary.epsilon
            );
        }
        Command::Score {
            manifest,
            model,
            method,
            temperature,
            sigma_scale,
            kl_invert,
            out,
            workers,
        } => {
            let model = match (method, model) {
                (Method::Mahalanobis, None) => {
                    bail!("--model is required for --method mahalanobis")
                }
                (_, m) => m.unwrap_or_default(),
            };
            let mut config = RunConfig::new(manifest, model, out, method);
            config.temperature = temperature;
            config.sigma_scale = sigma_scale;
            config.kl_invert = kl_invert.into();
            config.workers = workers;
            let summary = cli::cmd_score(&config)?;
            println!("scored {} subjects", summary.scored);
            if !summary.failures.is_empty() {
                for (subject, error) in &summary.failures {
                    eprintln!("failed {subject}: {error}");
                }
                bail!("{} of {} subjects failed", summary.failures.len(), {
                    summary.scored + summary.failures.len()
                });
            }
        }
        Command::Evaluate {
            manifest,
            method,
            temperature,
            target_tpr,
            bins,
            out,
        } => {
            let mut config = RunConfig::new(manifest, PathBuf::new(), out, method);
            config.temperature = temperature;
            config.target_tpr = target_tpr;
            config.bins = bins;
            let report = cli::cmd_evaluate(&config)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Synth { spec, out, seed } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading spec {}", spec.display()))?;
            let mut spec: ShiftSpec = serde_json::from_str(&text).context("parsing spec JSON")?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let manifest = synth::generate(&spec, &out)?;
            println!(
                "generated {} subjects under {}",
                manifest.subjects.len(),
                out.display()
            );
        }
        Command::Report { reports, out } => {
            if reports.is_empty() {
                bail!("no report files given");
            }
            let table = cli::cmd_report(&reports)?;
            match out {
                Some(path) => std::fs::write(path, table)?,
                None => print!("{table}"),
            }
        }
    }
    Ok(())
}
