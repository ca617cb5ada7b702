//! The unfolded ADMM against an independent coordinate-descent LASSO solver:
//! per column j, min ‖ŝ_j − Ŝc‖² + λ‖c‖₁ with c_j = 0.

mod common;

use common::{lasso_cd, random_shat};
use ndarray::Array1;
use spixel_ssc_core::selfrep::unfold_forward;

#[test]
fn deep_unfolding_matches_lasso_columns() {
    // Shapes sit inside the K=200 convergence envelope: tight λ values pair
    // with M below D, looser λ tolerates M > D.
    for (seed, (d, m, lambda)) in [
        (1u64, (16usize, 12usize, 0.1f64)),
        (2, (20, 14, 0.05)),
        (3, (20, 30, 0.2)),
        (4, (12, 8, 0.3)),
    ] {
        let shat = random_shat(d, m, 900 + seed);
        let state = unfold_forward(&shat, 200, 1.0, lambda).unwrap();
        for j in 0..m {
            let y: Array1<f64> = shat.column(j).to_owned();
            let oracle = lasso_cd(&shat, &y, lambda, j, 200_000, 1e-13);
            for k in 0..m {
                assert!(
                    (state.z[[k, j]] - oracle[k]).abs() <= 1e-4,
                    "seed {seed} column {j} coef {k}: admm {} vs cd {}",
                    state.z[[k, j]],
                    oracle[k]
                );
            }
        }
    }
}

#[test]
fn oracle_satisfies_lasso_optimality() {
    // KKT check keeps the oracle itself honest: |2Aᵀr|_k ≤ λ on zeros and
    // 2(Aᵀr)_k = λ·sign(c_k) on the support.
    let (d, m, lambda) = (10usize, 16usize, 0.15f64);
    let shat = random_shat(d, m, 77);
    for j in 0..m {
        let y: Array1<f64> = shat.column(j).to_owned();
        let c = lasso_cd(&shat, &y, lambda, j, 200_000, 1e-13);
        // r = y − Ac
        let mut r = y.clone();
        for k in 0..m {
            if c[k] != 0.0 {
                for b in 0..d {
                    r[b] -= shat[[b, k]] * c[k];
                }
            }
        }
        for k in 0..m {
            if k == j {
                continue;
            }
            let corr: f64 = (0..d).map(|b| shat[[b, k]] * r[b]).sum();
            if c[k] == 0.0 {
                assert!(
                    2.0 * corr.abs() <= lambda + 1e-8,
                    "column {j} coef {k}: inactive KKT violated ({corr})"
                );
            } else {
                assert!(
                    (2.0 * corr - lambda * c[k].signum()).abs() <= 1e-8,
                    "column {j} coef {k}: active KKT violated"
                );
            }
        }
    }
}
