//! Spectral clustering of the superpixel affinity and label propagation to
//! pixels: symmetric normalized Laplacian, k smallest eigenvectors, row
//! normalization, and seeded k-means with restarts.

use crate::error::{Error, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Degree guard for isolated nodes.
const DEGREE_GUARD: f64 = 1e-12;
const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITERS: usize = 100;

/// Cluster labels over superpixels and pixels, both 1-based.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub superpixel_labels: Vec<u16>,
    pub pixel_labels: Vec<u16>,
    /// λ_{k+1} − λ_k of the normalized Laplacian (0 when k = M).
    pub eigengap: f64,
}

/// Spectral clustering: L_sym = I − D^{−1/2} A D^{−1/2}, k smallest
/// eigenvectors, ℓ2-normalized rows, then k-means (k-means++ seeding,
/// 20 restarts, best inertia). Deterministic for a fixed seed.
pub fn spectral_cluster(a: &Array2<f64>, k: usize, seed: u64) -> Result<(Vec<u16>, f64)> {
    let m = a.nrows();
    if a.ncols() != m {
        return Err(Error::validation("affinity must be square"));
    }
    if k == 0 || k > m {
        return Err(Error::validation(format!(
            "cluster count {k} outside 1..=M ({m})"
        )));
    }
    let degrees: Vec<f64> = (0..m).map(|i| a.row(i).sum()).collect();
    if degrees.iter().all(|&d| d <= DEGREE_GUARD) {
        log::warn!("affinity is (near) all-zero; spectral embedding is degenerate");
    }
    let inv_sqrt: Vec<f64> = degrees
        .iter()
        .map(|&d| 1.0 / d.max(DEGREE_GUARD).sqrt())
        .collect();
    let mut lap = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let v = -inv_sqrt[i] * a[[i, j]] * inv_sqrt[j];
            lap[[i, j]] = if i == j { 1.0 + v } else { v };
        }
    }
    // Symmetrize against rounding before the eigensolve.
    let mut sym = nalgebra::DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            sym[(i, j)] = 0.5 * (lap[[i, j]] + lap[[j, i]]);
        }
    }
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].partial_cmp(&eig.eigenvalues[y]).unwrap());
    let eigengap = if k < m {
        eig.eigenvalues[order[k]] - eig.eigenvalues[order[k - 1]]
    } else {
        0.0
    };
    // Embedding: rows of the k smallest eigenvectors, ℓ2-normalized.
    let mut embed = Array2::<f64>::zeros((m, k));
    for (col, &idx) in order.iter().take(k).enumerate() {
        for row in 0..m {
            embed[[row, col]] = eig.eigenvectors[(row, idx)];
        }
    }
    for mut row in embed.rows_mut() {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    let labels = kmeans(&embed, k, seed);
    Ok((labels.iter().map(|&l| l as u16 + 1).collect(), eigengap))
}

/// Seeded k-means over rows: k-means++ initialization per restart, Lloyd
/// iterations, empty clusters reseeded to the farthest point, ties to the
/// lowest center index.
fn kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Vec<usize> {
    let (n, d) = points.dim();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(restart as u64));
        let mut centers = kmeans_pp_init(points, k, &mut rng);
        let mut assign = vec![0usize; n];
        for _ in 0..KMEANS_MAX_ITERS {
            let mut changed = false;
            for i in 0..n {
                let mut best_c = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, center) in centers.iter().enumerate() {
                    let dist = sq_dist(points, i, center);
                    if dist < best_d {
                        best_d = dist;
                        best_c = c;
                    }
                }
                if assign[i] != best_c {
                    assign[i] = best_c;
                    changed = true;
                }
            }
            // Recompute centers; reseed empty ones to the farthest point.
            let mut counts = vec![0usize; k];
            let mut sums = vec![vec![0.0f64; d]; k];
            for i in 0..n {
                counts[assign[i]] += 1;
                for b in 0..d {
                    sums[assign[i]][b] += points[[i, b]];
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    let far = (0..n)
                        .max_by(|&x, &y| {
                            let dx = sq_dist(points, x, &centers[assign[x]]);
                            let dy = sq_dist(points, y, &centers[assign[y]]);
                            dx.partial_cmp(&dy).unwrap()
                        })
                        .unwrap();
                    centers[c] = points.row(far).to_vec();
                    changed = true;
                } else {
                    for b in 0..d {
                        centers[c][b] = sums[c][b] / counts[c] as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = (0..n).map(|i| sq_dist(points, i, &centers[assign[i]])).sum();
        match &best {
            Some((bi, _)) if *bi <= inertia => {}
            _ => best = Some((inertia, assign)),
        }
    }
    best.expect("at least one restart").1
}

fn sq_dist(points: &Array2<f64>, i: usize, center: &[f64]) -> f64 {
    points
        .row(i)
        .iter()
        .zip(center.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn kmeans_pp_init(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points.row(rng.random_range(0..n)).to_vec());
    let mut dist = vec![0.0f64; n];
    while centers.len() < k {
        let mut total = 0.0;
        for i in 0..n {
            let d = centers
                .iter()
                .map(|c| sq_dist(points, i, c))
                .fold(f64::INFINITY, f64::min);
            dist[i] = d;
            total += d;
        }
        let next = if total <= 0.0 {
            // All points coincide with some center; any choice is equivalent.
            rng.random_range(0..n)
        } else {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for i in 0..n {
                acc += dist[i];
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centers.push(points.row(next).to_vec());
    }
    centers
}

/// Pixel labels = superpixel cluster labels gathered through the hard
/// assignment.
pub fn propagate(superpixel_labels: &[u16], hard: &[u32]) -> Vec<u16> {
    hard.iter()
        .map(|&j| superpixel_labels[j as usize])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn block_affinity(sizes: &[usize], cross: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let m: usize = sizes.iter().sum();
        let mut truth = Vec::with_capacity(m);
        for (b, &s) in sizes.iter().enumerate() {
            truth.extend(std::iter::repeat_n(b, s));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            for j in i + 1..m {
                let w = if truth[i] == truth[j] {
                    rng.random_range(0.5..1.0)
                } else {
                    cross * rng.random_range(0.0..1.0)
                };
                a[[i, j]] = w;
                a[[j, i]] = w;
            }
        }
        (a, truth)
    }

    fn partitions_agree(a: &[u16], b: &[usize]) -> bool {
        let mut map = std::collections::HashMap::new();
        for (&x, &y) in a.iter().zip(b.iter()) {
            match map.entry(x) {
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(y);
                }
                std::collections::hash_map::Entry::Occupied(e) => {
                    if *e.get() != y {
                        return false;
                    }
                }
            }
        }
        let distinct: std::collections::HashSet<usize> = map.values().copied().collect();
        distinct.len() == map.len()
    }

    #[test]
    fn disconnected_blocks_recovered_exactly() {
        let (a, truth) = block_affinity(&[4, 5, 3], 0.0, 1);
        let (labels, gap) = spectral_cluster(&a, 3, 7).unwrap();
        assert!(partitions_agree(&labels, &truth));
        assert!(gap > 0.1);
    }

    #[test]
    fn weak_cross_edges_still_recovered() {
        for seed in 0..5 {
            let (a, truth) = block_affinity(&[6, 6], 1e-3, 100 + seed);
            let (labels, _) = spectral_cluster(&a, 2, 11).unwrap();
            assert!(partitions_agree(&labels, &truth), "seed {seed}");
        }
    }

    #[test]
    fn zero_affinity_degenerate() {
        let a = Array2::<f64>::zeros((5, 5));
        let (labels, _) = spectral_cluster(&a, 5, 3).unwrap();
        let distinct: std::collections::HashSet<u16> = labels.iter().copied().collect();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (a, _) = block_affinity(&[5, 4, 6], 0.01, 9);
        let (l1, g1) = spectral_cluster(&a, 3, 42).unwrap();
        let (l2, g2) = spectral_cluster(&a, 3, 42).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn k_validation() {
        let a = Array2::<f64>::zeros((3, 3));
        assert!(spectral_cluster(&a, 4, 0).is_err());
        assert!(spectral_cluster(&a, 0, 0).is_err());
    }

    #[test]
    fn propagate_cases() {
        // Single superpixel → constant map.
        assert_eq!(propagate(&[3], &[0, 0, 0]), vec![3, 3, 3]);
        // Identity hard assignment → labels pass through.
        let sp = vec![2u16, 1, 3];
        assert_eq!(propagate(&sp, &[0, 1, 2]), sp);
        // Random instance matches a gather oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sp: Vec<u16> = (0..8).map(|_| rng.random_range(1..4u16)).collect();
        let hard: Vec<u32> = (0..50).map(|_| rng.random_range(0..8u32)).collect();
        let out = propagate(&sp, &hard);
        for (i, &h) in hard.iter().enumerate() {
            assert_eq!(out[i], sp[h as usize]);
        }
    }
}
