//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them).

mod common;

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

use patchood::aggregate::{self, PatchGrid};
use patchood::cli::{self, Method, ReportFile, RunConfig};
use patchood::gauss::{self, GaussianModel};
use patchood::metrics::{self, EvaluationRecord};
use patchood::reduce::PooledFeature;
use patchood::synth::{self, ShiftSpec};
use patchood::tensorio::{self, Split, TensorFile, TensorIoError};

fn check(criterion: &str, ok: bool, detail: &str) {
    if ok {
        println!("acceptance {criterion}: PASS ({detail})");
    } else {
        println!("acceptance {criterion}: FAIL ({detail})");
        panic!("acceptance {criterion} failed: {detail}");
    }
}

fn feat(values: Vec<f64>) -> PooledFeature {
    PooledFeature::new(values)
}

/// Random symmetric positive-definite matrix with eigenvalues in
/// `[lo, hi]`, built on the nalgebra side so the oracle stays independent.
fn random_spd(d: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(d, d, |_, _| {
        let v: f64 = rng.sample(StandardNormal);
        v
    });
    let q = raw.qr().q();
    let eigs = DVector::from_fn(d, |_, _| rng.gen_range(lo..hi));
    &q * DMatrix::from_diagonal(&eigs) * q.transpose()
}

fn to_ndarray(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

// ---------------------------------------------------------------------------
// 1. Mahalanobis oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_mahalanobis_matches_independent_solve() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x01);
    let mut worst_rel = 0.0f64;
    for trial in 0..1000 {
        let d = rng.gen_range(2..=32);
        let sigma_na = random_spd(d, 0.5, 5.0, &mut rng);
        let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-6.0..6.0)).collect();

        let model = GaussianModel::from_moments(
            Array1::from_vec(mu.clone()),
            to_ndarray(&sigma_na),
        )
        .unwrap();
        assert_eq!(model.epsilon(), 0.0, "trial {trial}: SPD must not need a ridge");
        let got = gauss::mahalanobis(&feat(z.clone()), &model).unwrap().value();

        let dv = DVector::from_vec(z) - DVector::from_vec(mu);
        let solved = sigma_na
            .clone()
            .lu()
            .solve(&dv)
            .expect("oracle solve must succeed");
        let want = dv.dot(&solved);

        let rel = (got - want).abs() / want.abs().max(1e-300);
        worst_rel = worst_rel.max(rel);
        assert!(
            rel <= 1e-8,
            "trial {trial} (d={d}): {got} vs oracle {want}, rel {rel}"
        );
    }
    let elapsed = start.elapsed();
    check(
        "01 mahalanobis-oracle-equivalence",
        elapsed < Duration::from_secs(10),
        &format!("1000 instances, worst rel err {worst_rel:.2e}, {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------------------
// 2. Moment-estimation fidelity (1/N normalizer)
// ---------------------------------------------------------------------------

#[test]
fn acceptance_02_fit_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x02);
    let n = 500;
    let d = 8;
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect();

    // independent two-pass oracle with the 1/N normalizer
    let mut mu = vec![0.0f64; d];
    for s in &raw {
        for (m, v) in mu.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut sigma = vec![vec![0.0f64; d]; d];
    for s in &raw {
        for i in 0..d {
            for j in 0..d {
                sigma[i][j] += (s[i] - mu[i]) * (s[j] - mu[j]);
            }
        }
    }
    for row in &mut sigma {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }

    let samples: Vec<PooledFeature> = raw.iter().map(|v| feat(v.clone())).collect();
    let model = gauss::fit_gaussian(&samples, &Default::default()).unwrap();

    let mut worst = 0.0f64;
    for i in 0..d {
        let rel = (model.mu()[i] - mu[i]).abs() / mu[i].abs().max(1.0);
        assert!(rel <= 1e-10, "mu[{i}]");
        worst = worst.max(rel);
        for j in 0..d {
            let rel = (model.sigma()[[i, j]] - sigma[i][j]).abs() / sigma[i][j].abs().max(1.0);
            assert!(rel <= 1e-10, "sigma[{i}][{j}]");
            worst = worst.max(rel);
        }
    }
    check(
        "02 moment-estimation-fidelity",
        true,
        &format!("500 samples d=8, worst rel err {worst:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// 3. Chi-square sanity of training distances
// ---------------------------------------------------------------------------

#[test]
fn acceptance_03_training_distance_chi_square() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x03);
    let d = 16;
    let n = 50 * d;
    let sigma_star = random_spd(d, 0.5, 4.0, &mut rng);
    let chol_star = sigma_star.clone().cholesky().unwrap();
    let mu_star = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));

    let samples: Vec<PooledFeature> = (0..n)
        .map(|_| {
            let xi = DVector::from_fn(d, |_, _| {
                let v: f64 = rng.sample(StandardNormal);
                v
            });
            let z = &mu_star + chol_star.l() * xi;
            feat(z.iter().copied().collect())
        })
        .collect();

    let model = gauss::fit_gaussian(&samples, &Default::default()).unwrap();
    assert_eq!(model.epsilon(), 0.0, "well-conditioned fit must not ridge");
    let mean_sq = samples
        .iter()
        .map(|s| gauss::mahalanobis(s, &model).unwrap().value())
        .sum::<f64>()
        / n as f64;
    let lo = 0.85 * d as f64;
    let hi = 1.15 * d as f64;
    check(
        "03 chi-square-sanity",
        mean_sq >= lo && mean_sq <= hi,
        &format!("mean squared distance {mean_sq:.4} in [{lo}, {hi}] (d={d}, N={n})"),
    );
}

// ---------------------------------------------------------------------------
// 4. Affine invariance of Mahalanobis vs Euclidean rank ordering
// ---------------------------------------------------------------------------

#[test]
fn acceptance_04_affine_map_preserves_mahalanobis_ranks_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x04);
    let d = 8;
    let n_train = 400;
    let n_test = 100;

    // anisotropic training data: per-axis stds 5, 4, 3, 2, 1, 1, 1, 1
    let stds = [5.0, 4.0, 3.0, 2.0, 1.0, 1.0, 1.0, 1.0];
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d)
            .map(|i| {
                let v: f64 = rng.sample(StandardNormal);
                v * stds[i]
            })
            .collect()
    };
    let train: Vec<Vec<f64>> = (0..n_train).map(|_| draw(&mut rng)).collect();
    let test: Vec<Vec<f64>> = (0..n_test).map(|_| draw(&mut rng)).collect();

    // invertible anisotropic map: rotation applied after a diag(10,1,...,1)
    // stretch; condition number exactly 10
    let angle = 0.7f64;
    let (sin, cos) = angle.sin_cos();
    let mut map = Array2::<f64>::eye(d);
    map[[0, 0]] = 10.0;
    let mut rot = Array2::<f64>::eye(d);
    rot[[0, 0]] = cos;
    rot[[0, 1]] = -sin;
    rot[[1, 0]] = sin;
    rot[[1, 1]] = cos;
    rot[[2, 2]] = cos;
    rot[[2, 3]] = -sin;
    rot[[3, 2]] = sin;
    rot[[3, 3]] = cos;
    let map = rot.dot(&map);

    let apply = |v: &[f64]| -> Vec<f64> {
        let x = Array1::from_vec(v.to_vec());
        map.dot(&x).to_vec()
    };

    let fit = |data: &[Vec<f64>]| -> GaussianModel {
        let samples: Vec<PooledFeature> = data.iter().map(|v| feat(v.clone())).collect();
        let m = gauss::fit_gaussian(&samples, &Default::default()).unwrap();
        assert_eq!(m.epsilon(), 0.0);
        m
    };
    let model_orig = fit(&train);
    let mapped_train: Vec<Vec<f64>> = train.iter().map(|v| apply(v)).collect();
    let model_mapped = fit(&mapped_train);

    let mut maha_orig = Vec::with_capacity(n_test);
    let mut maha_mapped = Vec::with_capacity(n_test);
    let mut eucl_orig = Vec::with_capacity(n_test);
    let mut eucl_mapped = Vec::with_capacity(n_test);
    for z in &test {
        let zf = feat(z.clone());
        let zm = feat(apply(z));
        maha_orig.push(gauss::mahalanobis(&zf, &model_orig).unwrap().value());
        maha_mapped.push(gauss::mahalanobis(&zm, &model_mapped).unwrap().value());
        eucl_orig.push(gauss::euclidean_sq(&zf, &model_orig).unwrap());
        eucl_mapped.push(gauss::euclidean_sq(&zm, &model_mapped).unwrap());
    }
    let rho_maha = common::spearman(&maha_orig, &maha_mapped);
    let rho_eucl = common::spearman(&eucl_orig, &eucl_mapped);
    check(
        "04 affine-rank-invariance",
        rho_maha >= 0.999 && rho_eucl < 0.99,
        &format!("spearman mahalanobis {rho_maha:.6}, euclidean {rho_eucl:.4}"),
    );
}

// ---------------------------------------------------------------------------
// 5 + 6. Protocol reproduction on the synthetic fixture
// ---------------------------------------------------------------------------

struct ProtocolFixture {
    _dir: TempDir,
    manifest: PathBuf,
    root: PathBuf,
    mahalanobis: ReportFile,
    pipeline_elapsed: Duration,
}

static PROTOCOL: OnceLock<ProtocolFixture> = OnceLock::new();

fn protocol_fixture() -> &'static ProtocolFixture {
    PROTOCOL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        let spec = ShiftSpec {
            d: 64,
            n_train: 1000,
            n_val: 50,
            n_test: 100,
            n_ood: 100,
            mean_shift: 5.0,
            cov_rotation: 0.0,
            scale: 1.0,
            seed: 20210901,
        };
        synth::generate(&spec, &data).unwrap();
        let manifest = data.join("manifest.json");

        let config = RunConfig::new(
            manifest.clone(),
            root.join("model"),
            root.join("out"),
            Method::Mahalanobis,
        );
        let start = Instant::now();
        cli::cmd_fit(&config).unwrap();
        let summary = cli::cmd_score(&config).unwrap();
        assert!(summary.failures.is_empty(), "{:?}", summary.failures);
        let mahalanobis = cli::cmd_evaluate(&config).unwrap();
        let pipeline_elapsed = start.elapsed();

        ProtocolFixture {
            _dir: dir,
            manifest,
            root,
            mahalanobis,
            pipeline_elapsed,
        }
    })
}

#[test]
fn acceptance_05_protocol_reproduction_at_desk_scale() {
    let fx = protocol_fixture();
    let report = &fx.mahalanobis.report;
    let ok = report.fpr <= 0.05
        && report.detection_error <= 0.08
        && fx.pipeline_elapsed < Duration::from_secs(60);
    check(
        "05 protocol-reproduction",
        ok,
        &format!(
            "FPR {:.4}, detection error {:.4}, pipeline {:.2?}",
            report.fpr, report.detection_error, fx.pipeline_elapsed
        ),
    );
}

#[test]
fn acceptance_06_mahalanobis_beats_every_baseline() {
    let fx = protocol_fixture();
    let mut lines = vec![format!(
        "mahalanobis {:.4}",
        fx.mahalanobis.report.detection_error
    )];
    let mut all_beaten = true;
    let baselines: [(Method, f64); 6] = [
        (Method::MaxSoftmax, 100.0),
        (Method::TempScaling, 10.0),
        (Method::TempScaling, 100.0),
        (Method::TempScaling, 1000.0),
        (Method::KlUniform, 100.0),
        (Method::McDropout, 100.0),
    ];
    for (method, temperature) in baselines {
        let mut config = RunConfig::new(
            fx.manifest.clone(),
            fx.root.join("model"),
            fx.root.join("out"),
            method,
        );
        config.temperature = temperature;
        let summary = cli::cmd_score(&config).unwrap();
        assert!(summary.failures.is_empty(), "{:?}", summary.failures);
        let report = cli::cmd_evaluate(&config).unwrap();
        lines.push(format!(
            "{} {:.4}",
            report.method, report.report.detection_error
        ));
        if report.report.detection_error <= fx.mahalanobis.report.detection_error {
            all_beaten = false;
        }
    }
    check(
        "06 baseline-ordering",
        all_beaten,
        &format!("detection errors: {}", lines.join(", ")),
    );
}

// ---------------------------------------------------------------------------
// 7. Calibration-error unit fidelity
// ---------------------------------------------------------------------------

#[test]
fn acceptance_07_esce_unit_fidelity() {
    let rec = |id: &str, u: f64, dice: f64| EvaluationRecord {
        subject_id: id.into(),
        split: Split::IdTest,
        normalized_uncertainty: u,
        dice: Some(dice),
    };
    // four records over two of M=2 bins, evaluated by hand
    let records = vec![
        rec("a", 0.05, 0.9),
        rec("b", 0.15, 0.8),
        rec("c", 0.15, 0.7),
        rec("d", 0.85, 0.2),
    ];
    let got = metrics::esce(&records, 2).unwrap();
    let bin1_u: f64 = (0.05 + 0.15 + 0.15) / 3.0;
    let bin1_dice: f64 = (0.9 + 0.8 + 0.7) / 3.0;
    let bin2_u: f64 = 0.85;
    let bin2_dice: f64 = 0.2;
    let want = (3.0 / 4.0) * (bin1_dice - (1.0 - bin1_u)).abs()
        + (1.0 / 4.0) * (bin2_dice - (1.0 - bin2_u)).abs();
    assert_eq!(got, want, "hand-evaluated sum must match exactly");

    // perfectly calibrated records collapse to zero
    let calibrated: Vec<EvaluationRecord> = (0..40)
        .map(|i| {
            let u = i as f64 / 39.0;
            rec(&format!("p{i}"), u, 1.0 - u)
        })
        .collect();
    let zero = metrics::esce(&calibrated, 10).unwrap();
    check(
        "07 esce-unit-fidelity",
        zero.abs() < 1e-12,
        &format!("hand fixture {got:.6} == {want:.6}, calibrated {zero:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// 8. Aggregation invariants over randomized instances
// ---------------------------------------------------------------------------

#[test]
fn acceptance_08_aggregation_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x08);
    let instances = 200;
    for instance in 0..instances {
        let image = [
            rng.gen_range(4..=10),
            rng.gen_range(4..=10),
            rng.gen_range(4..=10),
        ];
        let patch = [
            rng.gen_range(2..=image[0]),
            rng.gen_range(2..=image[1]),
            rng.gen_range(2..=image[2]),
        ];
        let step = [
            rng.gen_range(1..=patch[0]),
            rng.gen_range(1..=patch[1]),
            rng.gen_range(1..=patch[2]),
        ];
        let sigma_scale = rng.gen_range(0.05..0.6);
        let grid = PatchGrid::new(image, patch, Some(step)).unwrap();
        let filter = aggregate::make_filter(patch, sigma_scale);
        let n = grid.origins().len();

        // constant-score identity
        let c = rng.gen_range(0.0..20.0);
        let mask = aggregate::build_uncertainty_mask(&grid, &vec![c; n], &filter).unwrap();
        for &v in mask.values.iter() {
            assert!(
                (v - c).abs() <= 1e-9 * c.max(1.0),
                "instance {instance}: constant identity broken"
            );
        }

        // convex-combination bound against brute-force coverage
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let mask = aggregate::build_uncertainty_mask(&grid, &scores, &filter).unwrap();
        let mut lo = ndarray::Array3::from_elem((image[0], image[1], image[2]), f64::INFINITY);
        let mut hi =
            ndarray::Array3::from_elem((image[0], image[1], image[2]), f64::NEG_INFINITY);
        for (origin, &score) in grid.origins().iter().zip(&scores) {
            for i in origin[0]..origin[0] + patch[0] {
                for j in origin[1]..origin[1] + patch[1] {
                    for k in origin[2]..origin[2] + patch[2] {
                        lo[[i, j, k]] = lo[[i, j, k]].min(score);
                        hi[[i, j, k]] = hi[[i, j, k]].max(score);
                    }
                }
            }
        }
        for ((i, j, k), &v) in mask.values.indexed_iter() {
            assert!(
                v >= lo[[i, j, k]] - 1e-9 && v <= hi[[i, j, k]] + 1e-9,
                "instance {instance}: voxel ({i},{j},{k}) = {v} outside [{}, {}]",
                lo[[i, j, k]],
                hi[[i, j, k]]
            );
        }

        // filter scaling invariance
        let k = rng.gen_range(0.1..50.0);
        let mut scaled = filter.clone();
        scaled.weights.mapv_inplace(|w| w * k);
        let mask_scaled = aggregate::build_uncertainty_mask(&grid, &scores, &scaled).unwrap();
        for (a, b) in mask.values.iter().zip(mask_scaled.values.iter()) {
            assert!(
                (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                "instance {instance}: filter scaling changed the mask"
            );
        }
    }
    check(
        "08 aggregation-invariants",
        true,
        &format!("{instances} randomized grid/filter instances"),
    );
}

// ---------------------------------------------------------------------------
// 9. End-to-end determinism across runs and worker counts
// ---------------------------------------------------------------------------

#[test]
fn acceptance_09_pipeline_determinism() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let spec = ShiftSpec {
        d: 16,
        n_train: 50,
        n_val: 10,
        n_test: 20,
        n_ood: 20,
        mean_shift: 3.0,
        cov_rotation: 0.4,
        scale: 1.3,
        seed: 909,
    };
    synth::generate(&spec, &data).unwrap();
    let manifest = data.join("manifest.json");

    let run = |label: &str, workers: usize| -> PathBuf {
        let root = dir.path().join(label);
        let mut config = RunConfig::new(
            manifest.clone(),
            root.join("model"),
            root.join("out"),
            Method::Mahalanobis,
        );
        config.workers = workers;
        cli::cmd_fit(&config).unwrap();
        let summary = cli::cmd_score(&config).unwrap();
        assert!(summary.failures.is_empty());
        cli::cmd_evaluate(&config).unwrap();
        root
    };

    let a = run("run_a_w1", 1);
    let b = run("run_b_w1", 1);
    let c = run("run_c_w8", 8);
    common::assert_dirs_byte_identical(&a, &b);
    common::assert_dirs_byte_identical(&a, &c);
    check(
        "09 pipeline-determinism",
        true,
        "model, masks, sidecars, CSV and report byte-identical at workers 1 and 8",
    );
}

// ---------------------------------------------------------------------------
// 10. Tensor I/O round trip and malformed-file classification
// ---------------------------------------------------------------------------

#[test]
fn acceptance_10_tensor_io_round_trip_and_error_corpus() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x10);
    for i in 0..100 {
        let rank = rng.gen_range(1..=4);
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=6)).collect();
        let n: usize = shape.iter().product();
        let path = dir.path().join(format!("t{i}.npy"));
        let tensor = if rng.gen_bool(0.5) {
            let values: Vec<f32> = (0..n)
                .map(|_| f32::from_bits(rng.gen::<u32>() & 0x7f7f_ffff))
                .collect();
            TensorFile::from_f32(shape, values).unwrap()
        } else {
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e9..1e9)).collect();
            TensorFile::from_f64(shape, values).unwrap()
        };
        tensorio::write_tensor(&tensor, &path).unwrap();
        let back = tensorio::read_tensor(&path).unwrap();
        assert_eq!(back, tensor, "round trip {i}");
    }

    // malformed corpus: every file yields its classified error
    let base = {
        let t = TensorFile::from_f32(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = dir.path().join("base.npy");
        tensorio::write_tensor(&t, &p).unwrap();
        std::fs::read(&p).unwrap()
    };
    let write_variant = |name: &str, mutate: &dyn Fn(&mut Vec<u8>)| -> PathBuf {
        let mut bytes = base.clone();
        mutate(&mut bytes);
        let p = dir.path().join(name);
        std::fs::write(&p, &bytes).unwrap();
        p
    };
    let header_pos = |needle: &[u8]| -> usize {
        base.windows(needle.len())
            .position(|w| w == needle)
            .unwrap()
    };

    use TensorIoError::*;
    type ErrorClass = fn(&TensorIoError) -> bool;
    let corpus: Vec<(PathBuf, ErrorClass)> = vec![
        (
            write_variant("bad_magic.npy", &|b| b[0] = b'X'),
            |e| matches!(e, MalformedHeader(_)),
        ),
        (
            write_variant("bad_version.npy", &|b| b[6] = 9),
            |e| matches!(e, MalformedHeader(_)),
        ),
        (
            write_variant("truncated_header.npy", &|b| b.truncate(12)),
            |e| matches!(e, MalformedHeader(_)),
        ),
        (
            {
                let pos = header_pos(b"<f4");
                write_variant("big_endian.npy", &move |b| b[pos] = b'>')
            },
            |e| matches!(e, UnsupportedDtype(_)),
        ),
        (
            {
                let pos = header_pos(b"<f4");
                write_variant("integer_dtype.npy", &move |b| b[pos + 1] = b'i')
            },
            |e| matches!(e, UnsupportedDtype(_)),
        ),
        (
            {
                let pos = header_pos(b"False");
                write_variant("fortran_order.npy", &move |b| {
                    b.splice(pos..pos + 5, b"True ".iter().copied());
                })
            },
            |e| matches!(e, MalformedHeader(_)),
        ),
        (
            write_variant("truncated_payload.npy", &|b| {
                let len = b.len();
                b.truncate(len - 6);
            }),
            |e| matches!(e, ShapeDataMismatch { .. }),
        ),
        (
            write_variant("trailing_bytes.npy", &|b| b.extend_from_slice(&[7; 5])),
            |e| matches!(e, ShapeDataMismatch { .. }),
        ),
        (
            {
                let pos = header_pos(b"(2, 2)");
                write_variant("zero_dim.npy", &move |b| b[pos + 1] = b'0')
            },
            |e| matches!(e, MalformedHeader(_)),
        ),
        (
            {
                let pos = header_pos(b"(2, 2)");
                write_variant("garbage_shape.npy", &move |b| b[pos + 1] = b'x')
            },
            |e| matches!(e, MalformedHeader(_)),
        ),
    ];
    for (path, classifier) in &corpus {
        match tensorio::read_tensor(path) {
            Err(e) => assert!(
                classifier(&e),
                "{}: unexpected error class {e:?}",
                path.display()
            ),
            Ok(_) => panic!("{}: malformed file read successfully", path.display()),
        }
    }
    check(
        "10 tensor-io-round-trip",
        true,
        &format!(
            "100 random tensors bit-exact, {} malformed files classified",
            corpus.len()
        ),
    );
}
