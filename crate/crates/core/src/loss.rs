//! Training objectives: superpixel compactness and local consistency,
//! self-representation reconstruction / sparsity / entropy, and the residual
//! noise penalty, combined as total = α·rep + spixel + noise with
//! rep = 2·recon + l1 + entropy.

use crate::exec::{self, PIXEL_CHUNK};
use crate::linalg;
use ndarray::Array2;
use serde::Serialize;

/// Stability constant inside the entropy term.
pub const EPS_ENTROPY: f64 = 1e-8;
/// Default weight of the noise penalty.
pub const DEFAULT_NOISE_WEIGHT: f64 = 50.0;

/// All loss terms of one forward pass. `rep` and `total` are assembled from
/// the parts with exactly the stated arithmetic, so the identities
/// `rep = 2·recon + l1 + entropy` and `total = α·rep + spixel + noise`
/// hold bitwise.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossReport {
    pub spixel_compact: f64,
    pub spixel_consistency: f64,
    pub recon: f64,
    pub l1: f64,
    pub entropy: f64,
    pub noise: f64,
    pub rep: f64,
    pub total: f64,
}

impl LossReport {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        spixel_compact: f64,
        spixel_consistency: f64,
        recon: f64,
        l1: f64,
        entropy: f64,
        noise: f64,
        alpha: f64,
    ) -> LossReport {
        let rep = 2.0 * recon + l1 + entropy;
        let total = alpha * rep + (spixel_compact + spixel_consistency) + noise;
        LossReport {
            spixel_compact,
            spixel_consistency,
            recon,
            l1,
            entropy,
            noise,
            rep,
            total,
        }
    }

    pub fn csv_header() -> &'static str {
        "epoch,spixel_compact,spixel_consistency,recon,l1,entropy,noise,rep,total"
    }

    pub fn csv_row(&self, epoch: usize) -> String {
        format!(
            "{epoch},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.spixel_compact,
            self.spixel_consistency,
            self.recon,
            self.l1,
            self.entropy,
            self.noise,
            self.rep,
            self.total
        )
    }
}

// ---------------------------------------------------------------------------
// Superpixel loss
// ---------------------------------------------------------------------------

/// Number of ordered 4-neighbor pairs on an H×W grid.
pub fn neighbor_pair_count(height: usize, width: usize) -> usize {
    2 * (height * (width.saturating_sub(1)) + width * (height.saturating_sub(1)))
}

fn row_pair_stats(
    probs: &Array2<f64>,
    candidates: &Array2<u32>,
    i: usize,
    n: usize,
) -> (f64, f64, f64) {
    let g = probs.ncols();
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for a in 0..g {
        let pu = probs[[i, a]];
        nu += pu * pu;
        let cu = candidates[[i, a]];
        for b in 0..g {
            if candidates[[n, b]] == cu {
                dot += pu * probs[[n, b]];
            }
        }
    }
    for b in 0..g {
        let pv = probs[[n, b]];
        nv += pv * pv;
    }
    (dot, nu.sqrt(), nv.sqrt())
}

/// Spectral compactness (mean squared pixel-to-centroid error) and local
/// consistency (mean cosine dissimilarity of neighboring assignment rows,
/// embedded into full superpixel space through the candidate sets).
pub fn spixel_loss(
    xp: &Array2<f64>,
    f: &Array2<f64>,
    probs: &Array2<f64>,
    candidates: &Array2<u32>,
    height: usize,
    width: usize,
) -> (f64, f64) {
    let n = xp.nrows();
    let d = xp.ncols();
    let compact = exec::sum_chunks(n, PIXEL_CHUNK, |range| {
        let mut acc = 0.0;
        for i in range {
            for b in 0..d {
                let e = xp[[i, b]] - f[[i, b]];
                acc += e * e;
            }
        }
        acc
    }) / n as f64;

    let pairs = neighbor_pair_count(height, width);
    if pairs == 0 {
        return (compact, 0.0);
    }
    let consistency = exec::sum_chunks(n, PIXEL_CHUNK, |range| {
        let mut acc = 0.0;
        for i in range {
            let (r, c) = (i / width, i % width);
            // Ordered pairs: every 4-neighbor of i, counted from i's side.
            let mut visit = |ni: usize| {
                let (dot, nu, nv) = row_pair_stats(probs, candidates, i, ni);
                let cos = if nu > 0.0 && nv > 0.0 {
                    dot / (nu * nv)
                } else {
                    0.0
                };
                acc += 1.0 - cos;
            };
            if r > 0 {
                visit(i - width);
            }
            if r + 1 < height {
                visit(i + width);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < width {
                visit(i + 1);
            }
        }
        acc
    }) / pairs as f64;
    (compact, consistency)
}

/// Backward of the compactness term: `scale`·∂compact/∂X′ into `g_features`
/// and the matching −gradient into the hard-assigned centroids.
pub fn compact_backward(
    xp: &Array2<f64>,
    f: &Array2<f64>,
    hard: &[u32],
    scale: f64,
    g_features: &mut Array2<f64>,
    g_spectral: &mut Array2<f64>,
) {
    let n = xp.nrows();
    let d = xp.ncols();
    let coef = scale * 2.0 / n as f64;
    {
        let slab = g_features.as_slice_mut().expect("contiguous");
        exec::for_each_chunk_mut(slab, PIXEL_CHUNK * d, |k, chunk| {
            let base = k * PIXEL_CHUNK;
            for (row, out) in chunk.chunks_mut(d).enumerate() {
                let i = base + row;
                for (b, o) in out.iter_mut().enumerate() {
                    *o += coef * (xp[[i, b]] - f[[i, b]]);
                }
            }
        });
    }
    // Centroid side: scatter by hard label, sequential in pixel order.
    for i in 0..n {
        let j = hard[i] as usize;
        for b in 0..d {
            g_spectral[[j, b]] -= coef * (xp[[i, b]] - f[[i, b]]);
        }
    }
}

/// Backward of the consistency term into the assignment-probability gradient.
pub fn consistency_backward(
    probs: &Array2<f64>,
    candidates: &Array2<u32>,
    height: usize,
    width: usize,
    scale: f64,
    g_probs: &mut Array2<f64>,
) {
    let pairs = neighbor_pair_count(height, width);
    if pairs == 0 {
        return;
    }
    let g = probs.ncols();
    // Each unordered neighbor pair appears twice in the ordered sum and the
    // cosine is symmetric, so pixel i collects a factor-2 partial per neighbor.
    let coef = scale * 2.0 / pairs as f64;
    let slab = g_probs.as_slice_mut().expect("contiguous");
    exec::for_each_chunk_mut(slab, PIXEL_CHUNK * g, |k, chunk| {
        let base = k * PIXEL_CHUNK;
        for (row, out) in chunk.chunks_mut(g).enumerate() {
            let i = base + row;
            let (r, c) = (i / width, i % width);
            let visit = |ni: usize, out: &mut [f64]| {
                let (dot, nu, nv) = row_pair_stats(probs, candidates, i, ni);
                if nu == 0.0 || nv == 0.0 {
                    return;
                }
                let cos = dot / (nu * nv);
                for (a, o) in out.iter_mut().enumerate() {
                    // v embedded at i's candidate ids.
                    let cu = candidates[[i, a]];
                    let mut v_at = 0.0;
                    for b in 0..g {
                        if candidates[[ni, b]] == cu {
                            v_at += probs[[ni, b]];
                        }
                    }
                    let dcos = v_at / (nu * nv) - cos * probs[[i, a]] / (nu * nu);
                    *o += coef * (-dcos);
                }
            };
            if r > 0 {
                visit(i - width, out);
            }
            if r + 1 < height {
                visit(i + width, out);
            }
            if c > 0 {
                visit(i - 1, out);
            }
            if c + 1 < width {
                visit(i + 1, out);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Self-representation losses
// ---------------------------------------------------------------------------

/// ‖ŜZ − Ŝ‖²_F.
pub fn recon_loss(shat: &Array2<f64>, z: &Array2<f64>) -> f64 {
    let prod = linalg::matmul(&shat.view(), &z.view());
    prod.iter()
        .zip(shat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Backward of the reconstruction loss: gŜ += s·2E(Z−I)ᵀ, gZ += s·2ŜᵀE with
/// E = ŜZ − Ŝ.
pub fn recon_backward(
    shat: &Array2<f64>,
    z: &Array2<f64>,
    scale: f64,
    g_shat: &mut Array2<f64>,
    g_z: &mut Array2<f64>,
) {
    let mut e = linalg::matmul(&shat.view(), &z.view());
    e.zip_mut_with(shat, |a, &b| *a -= b);
    // gŜ += 2s(EZᵀ − E)
    let ezt = linalg::matmul(&e.view(), &z.t());
    g_shat.zip_mut_with(&ezt, |a, &b| *a += 2.0 * scale * b);
    g_shat.zip_mut_with(&e, |a, &b| *a -= 2.0 * scale * b);
    // gZ += 2s·ŜᵀE
    let ste = linalg::matmul(&shat.t(), &e.view());
    g_z.zip_mut_with(&ste, |a, &b| *a += 2.0 * scale * b);
}

/// Σ|z_ij|.
pub fn l1_loss(z: &Array2<f64>) -> f64 {
    z.iter().map(|v| v.abs()).sum()
}

/// Backward of the ℓ1 term; the subgradient at 0 is 0.
pub fn l1_backward(z: &Array2<f64>, scale: f64, g_z: &mut Array2<f64>) {
    g_z.zip_mut_with(z, |g, &v| *g += scale * v.signum() * if v == 0.0 { 0.0 } else { 1.0 });
}

/// Column-normalized entropy of |Z|: each column's absolute values form a
/// distribution c̃; the loss is −(1/M)Σ_j Σ_i c̃ log(c̃ + ε).
pub fn entropy_loss(z: &Array2<f64>) -> f64 {
    let (rows, cols) = z.dim();
    let mut acc = 0.0;
    for j in 0..cols {
        let total: f64 = (0..rows).map(|i| z[[i, j]].abs()).sum::<f64>() + EPS_ENTROPY;
        let mut h = 0.0;
        for i in 0..rows {
            let c = z[[i, j]].abs() / total;
            h -= c * (c + EPS_ENTROPY).ln();
        }
        acc += h;
    }
    acc / cols as f64
}

/// Backward of the entropy term; the |·| subgradient at 0 is 0.
pub fn entropy_backward(z: &Array2<f64>, scale: f64, g_z: &mut Array2<f64>) {
    let (rows, cols) = z.dim();
    for j in 0..cols {
        let total: f64 = (0..rows).map(|i| z[[i, j]].abs()).sum::<f64>() + EPS_ENTROPY;
        // φ_i = ln(c̃+ε) + c̃/(c̃+ε); ∂loss/∂|z_kj| = (Σ_i c̃φ_i − φ_k)/(M·T_j)
        let mut inner = 0.0;
        let mut phi = vec![0.0; rows];
        for i in 0..rows {
            let c = z[[i, j]].abs() / total;
            phi[i] = (c + EPS_ENTROPY).ln() + c / (c + EPS_ENTROPY);
            inner += c * phi[i];
        }
        let coef = scale / (cols as f64 * total);
        for i in 0..rows {
            let v = z[[i, j]];
            if v != 0.0 {
                g_z[[i, j]] += coef * (inner - phi[i]) * v.signum();
            }
        }
    }
}

/// Noise penalty (λ/(N·D))·Σδ².
pub fn noise_loss(delta: &Array2<f64>, lambda: f64) -> f64 {
    let nd = (delta.nrows() * delta.ncols()) as f64;
    lambda / nd * delta.iter().map(|v| v * v).sum::<f64>()
}

/// Backward of the noise penalty: gδ += s·2λδ/(ND).
pub fn noise_backward(delta: &Array2<f64>, lambda: f64, scale: f64, g_delta: &mut Array2<f64>) {
    let nd = (delta.nrows() * delta.ncols()) as f64;
    let coef = scale * 2.0 * lambda / nd;
    g_delta.zip_mut_with(delta, |g, &v| *g += coef * v);
}
