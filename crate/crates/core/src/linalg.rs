//! Small dense linear algebra: Cholesky factorization of SPD matrices and a
//! chunk-parallel matrix product used by the unfolded ADMM layers.

use crate::error::{Error, Result};
use crate::exec::{self, ROW_CHUNK};
use ndarray::{s, Array2, ArrayView2};

/// Lower-triangular Cholesky factor L of a symmetric positive-definite
/// matrix, A = L Lᵀ. Fails if a pivot drops below `1e-300`.
pub fn cholesky(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::validation("cholesky needs a square matrix"));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 1e-300 || !sum.is_finite() {
                    return Err(Error::numerical(format!(
                        "cholesky pivot {i} is non-positive ({sum:.3e})"
                    )));
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Inverse of A = L Lᵀ from its Cholesky factor: A⁻¹ = L⁻ᵀ L⁻¹.
pub fn cholesky_inverse(l: &ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    // Forward-substitute columns of the identity to get L⁻¹ (lower triangular).
    let mut linv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        linv[[j, j]] = 1.0 / l[[j, j]];
        for i in j + 1..n {
            let mut sum = 0.0;
            for k in j..i {
                sum += l[[i, k]] * linv[[k, j]];
            }
            linv[[i, j]] = -sum / l[[i, i]];
        }
    }
    let mut inv = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = 0.0;
            // (L⁻ᵀ L⁻¹)_{ij} = Σ_k (L⁻¹)_{ki} (L⁻¹)_{kj}, nonzero for k ≥ max(i, j).
            for k in i..n {
                sum += linv[[k, i]] * linv[[k, j]];
            }
            inv[[i, j]] = sum;
            inv[[j, i]] = sum;
        }
    }
    inv
}

/// Solve A x = b for SPD `a` via Cholesky (single right-hand side).
pub fn spd_solve(a: &ArrayView2<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky(a)?;
    let n = b.len();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[[i, k]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[[k, i]] * y[k];
        }
        y[i] /= l[[i, i]];
    }
    Ok(y)
}

/// `a · b` with the output rows computed in fixed [`ROW_CHUNK`] blocks. Each
/// block is an independent ndarray `dot`, so the result is identical on the
/// sequential and parallel paths.
pub fn matmul(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    let (m, n) = (a.nrows(), b.ncols());
    let mut out = Array2::<f64>::zeros((m, n));
    {
        let out_slice = out.as_slice_mut().expect("contiguous output");
        exec::for_each_chunk_mut(out_slice, ROW_CHUNK * n, |k, chunk| {
            let r0 = k * ROW_CHUNK;
            let r1 = (r0 + chunk.len() / n).min(m);
            let block = a.slice(s![r0..r1, ..]).dot(b);
            chunk.copy_from_slice(block.as_slice().expect("contiguous block"));
        });
    }
    out
}

/// Frobenius inner product ⟨a, b⟩.
pub fn frob_dot(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
