//! Shared oracles for the integration suites. Everything here is written
//! against the problem statements directly and stays independent of the
//! library's main computation paths.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Coordinate-descent LASSO: min_c ‖y − Ac‖² + λ‖c‖₁ with coordinate
/// `exclude` pinned to zero. The data term carries no 1/2, so the coordinate
/// update thresholds at λ/2.
pub fn lasso_cd(
    a: &Array2<f64>,
    y: &Array1<f64>,
    lambda: f64,
    exclude: usize,
    max_sweeps: usize,
    tol: f64,
) -> Array1<f64> {
    let (rows, cols) = a.dim();
    let mut c = Array1::<f64>::zeros(cols);
    // Residual r = y − Ac starts at y.
    let mut r = y.clone();
    let col_sq: Vec<f64> = (0..cols)
        .map(|k| a.column(k).iter().map(|v| v * v).sum())
        .collect();
    for _ in 0..max_sweeps {
        let mut max_change = 0.0f64;
        for k in 0..cols {
            if k == exclude || col_sq[k] <= 1e-300 {
                continue;
            }
            let old = c[k];
            // Partial residual correlation: aₖᵀ(r + aₖ·old).
            let mut corr = 0.0;
            for i in 0..rows {
                corr += a[[i, k]] * r[i];
            }
            corr += col_sq[k] * old;
            let new = soft_threshold(corr, lambda / 2.0) / col_sq[k];
            if new != old {
                let delta = new - old;
                for i in 0..rows {
                    r[i] -= delta * a[[i, k]];
                }
                c[k] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tol {
            break;
        }
    }
    c
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Random M×D feature rows with unit-normalized transposed columns, matching
/// the library's Ŝ construction but built directly here.
pub fn random_shat(d: usize, m: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shat = Array2::<f64>::zeros((d, m));
    for j in 0..m {
        loop {
            let col: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for (b, v) in col.iter().enumerate() {
                    shat[[b, j]] = v / norm;
                }
                break;
            }
        }
    }
    shat
}

/// Exhaustive minimum-normalized-cut 2-partition of a symmetric affinity.
/// Returns a boolean side per node.
pub fn min_ncut_bipartition(a: &Array2<f64>) -> Vec<bool> {
    let m = a.nrows();
    assert!(m >= 2 && m <= 20, "exhaustive search needs small M");
    let degree: Vec<f64> = (0..m).map(|i| a.row(i).sum()).collect();
    let mut best_cut = f64::INFINITY;
    let mut best_mask = vec![false; m];
    // Fix node 0 on side false to halve the search space.
    for mask in 1..(1u32 << (m - 1)) {
        let side: Vec<bool> = (0..m)
            .map(|i| i > 0 && (mask >> (i - 1)) & 1 == 1)
            .collect();
        let mut cut = 0.0;
        let mut vol_a = 0.0;
        let mut vol_b = 0.0;
        for i in 0..m {
            if side[i] {
                vol_a += degree[i];
            } else {
                vol_b += degree[i];
            }
            for j in i + 1..m {
                if side[i] != side[j] {
                    cut += a[[i, j]];
                }
            }
        }
        if vol_a <= 0.0 || vol_b <= 0.0 {
            continue;
        }
        let ncut = cut * (1.0 / vol_a + 1.0 / vol_b);
        if ncut < best_cut {
            best_cut = ncut;
            best_mask = side;
        }
    }
    best_mask
}

/// Relative error with an absolute floor: values whose magnitudes both sit
/// under `floor` compare as equal.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < floor {
        0.0
    } else {
        (a - b).abs() / denom
    }
}
