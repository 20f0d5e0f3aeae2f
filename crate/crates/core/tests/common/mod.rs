//! Shared helpers for integration and acceptance tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

/// Ranks with averaged ties.
fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

/// Spearman rank correlation with averaged ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    pearson(&ranks(x), &ranks(y))
}

/// AUROC of separating `high` (positive class: should score higher) from
/// `low`, via the rank-sum statistic; ties count half.
pub fn auroc(low: &[f64], high: &[f64]) -> f64 {
    let mut favorable = 0.0;
    for &h in high {
        for &l in low {
            if h > l {
                favorable += 1.0;
            } else if h == l {
                favorable += 0.5;
            }
        }
    }
    favorable / (low.len() as f64 * high.len() as f64)
}

/// Recursively collect all file paths under `dir`, sorted by relative path.
pub fn collect_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in std::fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}

/// Assert two directory trees hold the same relative files with identical
/// bytes.
pub fn assert_dirs_byte_identical(a: &Path, b: &Path) {
    let files_a = collect_files(a);
    let files_b = collect_files(b);
    let rel = |base: &Path, list: &[PathBuf]| -> Vec<PathBuf> {
        list.iter()
            .map(|p| p.strip_prefix(base).unwrap().to_path_buf())
            .collect()
    };
    assert_eq!(rel(a, &files_a), rel(b, &files_b), "file sets differ");
    for (fa, fb) in files_a.iter().zip(&files_b) {
        let bytes_a = std::fs::read(fa).unwrap();
        let bytes_b = std::fs::read(fb).unwrap();
        assert_eq!(bytes_a, bytes_b, "{} differs from {}", fa.display(), fb.display());
    }
}

#[cfg(test)]
mod self_tests {
    use super::*;

    #[test]
    fn spearman_perfect_and_inverse() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let up = [10.0, 20.0, 30.0, 40.0];
        let down = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&x, &up) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &down) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn auroc_separable_and_chance() {
        assert_eq!(auroc(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert_eq!(auroc(&[3.0, 4.0], &[1.0, 2.0]), 0.0);
        assert_eq!(auroc(&[1.0, 2.0], &[1.0, 2.0]), 0.5);
    }
}
