//! Differentiable superpixel generation: grid seeding, candidate maps,
//! compactness-weighted distances, temperature softmax assignment, soft
//! centroid updates, and connectivity cleanup of the final hard labels.
//!
//! Every forward kernel has a reverse-mode companion (`*_backward`) used by
//! the training loop. Candidate sets and hard labels are index structures:
//! they are recomputed from current values but carry no gradient.

use crate::error::{Error, Result};
use crate::exec::{self, PIXEL_CHUNK};
use ndarray::{Array1, Array2};

/// Denominator guard for the soft centroid update.
pub const EPS_DEN: f64 = 1e-8;

/// Spectral and spatial superpixel centroids. Spatial coordinates are in
/// grid-step units (pixel coordinates divided by sqrt(N/M)).
#[derive(Debug, Clone)]
pub struct SuperpixelState {
    /// M×D spectral centroids.
    pub spectral: Array2<f64>,
    /// M×2 spatial centroids (row, col).
    pub spatial: Array2<f64>,
}

impl SuperpixelState {
    pub fn count(&self) -> usize {
        self.spectral.nrows()
    }
}

/// Per-superpixel compactness trade-off, parameterized through a sigmoid so
/// the effective weight stays inside (0, 1).
#[derive(Debug, Clone)]
pub struct CompactnessWeights {
    pub raw: Array1<f64>,
}

impl CompactnessWeights {
    pub fn uniform(m: usize) -> Self {
        CompactnessWeights {
            raw: Array1::zeros(m),
        }
    }

    pub fn effective(&self) -> Array1<f64> {
        self.raw.mapv(sigmoid)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adapted features X′ = X + δ together with fixed pixel coordinates in
/// grid-step units.
#[derive(Debug, Clone)]
pub struct AdaptedFeatures {
    /// N×D.
    pub features: Array2<f64>,
    /// N×2 (row, col) in grid-step units.
    pub coords: Array2<f64>,
}

/// Soft pixel→superpixel assignment restricted to the G nearest candidates.
#[derive(Debug, Clone)]
pub struct SoftAssignment {
    /// N×G candidate superpixel indices, ordered by (spatial distance, index).
    pub candidates: Array2<u32>,
    /// N×G row-stochastic probabilities over the candidate set.
    pub probs: Array2<f64>,
    pub tau: f64,
    /// Argmax superpixel per pixel; ties resolve to the lowest index.
    pub hard: Vec<u32>,
}

/// Pixel coordinates in grid-step units for an H×W image with M superpixels.
pub fn pixel_coords(height: usize, width: usize, m: usize) -> Array2<f64> {
    let n = height * width;
    let step = (n as f64 / m as f64).sqrt();
    let mut coords = Array2::zeros((n, 2));
    for r in 0..height {
        for c in 0..width {
            coords[[r * width + c, 0]] = r as f64 / step;
            coords[[r * width + c, 1]] = c as f64 / step;
        }
    }
    coords
}

/// Grid seeding geometry: which initial cell each pixel belongs to.
#[derive(Debug, Clone)]
pub struct GridInit {
    pub cell_of_pixel: Vec<u32>,
    pub cell_size: Vec<u32>,
}

/// Seed M superpixels on a near-square grid: ⌈√(M·H/W)⌉ rows of cells by
/// ⌈M / rows⌉ columns, trimmed to exactly M by reassigning pixels of excess
/// cells to the nearest kept cell center. Each centroid is the mean feature /
/// mean coordinate of its cell.
pub fn init_grid(
    feat: &AdaptedFeatures,
    height: usize,
    width: usize,
    m: usize,
) -> Result<(SuperpixelState, GridInit)> {
    let n = height * width;
    let d = feat.features.ncols();
    if m == 0 || m > n {
        return Err(Error::validation(format!(
            "superpixel count {m} outside 1..=N ({n})"
        )));
    }
    let grid_rows = ((m as f64 * height as f64 / width as f64).sqrt().ceil() as usize)
        .clamp(1, height.max(1));
    let grid_cols = m.div_ceil(grid_rows).clamp(1, width.max(1));
    // grid_rows·grid_cols can fall short of M when clamped by the image
    // geometry; widen columns first, then rows.
    let mut grid_rows = grid_rows;
    let mut grid_cols = grid_cols;
    while grid_rows * grid_cols < m {
        if grid_cols < width {
            grid_cols += 1;
        } else {
            grid_rows += 1;
        }
    }
    let cell_h = height as f64 / grid_rows as f64;
    let cell_w = width as f64 / grid_cols as f64;
    // Analytic centers of the kept cells, used only to re-home pixels whose
    // raw cell index exceeds M-1.
    let center = |cell: usize| -> (f64, f64) {
        let cr = cell / grid_cols;
        let cc = cell % grid_cols;
        (
            (cr as f64 + 0.5) * cell_h - 0.5,
            (cc as f64 + 0.5) * cell_w - 0.5,
        )
    };
    let mut cell_of_pixel = vec![0u32; n];
    for r in 0..height {
        for c in 0..width {
            let cr = ((r as f64 / cell_h) as usize).min(grid_rows - 1);
            let cc = ((c as f64 / cell_w) as usize).min(grid_cols - 1);
            let mut cell = cr * grid_cols + cc;
            if cell >= m {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for k in 0..m {
                    let (kr, kc) = center(k);
                    let dist = (r as f64 - kr).powi(2) + (c as f64 - kc).powi(2);
                    if dist < best_d {
                        best_d = dist;
                        best = k;
                    }
                }
                cell = best;
            }
            cell_of_pixel[r * width + c] = cell as u32;
        }
    }
    let mut cell_size = vec![0u32; m];
    for &c in &cell_of_pixel {
        cell_size[c as usize] += 1;
    }
    if cell_size.iter().any(|&s| s == 0) {
        return Err(Error::validation(format!(
            "grid seeding produced an empty cell (H={height} W={width} M={m})"
        )));
    }
    let mut spectral = Array2::<f64>::zeros((m, d));
    let mut spatial = Array2::<f64>::zeros((m, 2));
    for i in 0..n {
        let j = cell_of_pixel[i] as usize;
        for b in 0..d {
            spectral[[j, b]] += feat.features[[i, b]];
        }
        spatial[[j, 0]] += feat.coords[[i, 0]];
        spatial[[j, 1]] += feat.coords[[i, 1]];
    }
    for j in 0..m {
        let inv = 1.0 / cell_size[j] as f64;
        for b in 0..d {
            spectral[[j, b]] *= inv;
        }
        spatial[[j, 0]] *= inv;
        spatial[[j, 1]] *= inv;
    }
    Ok((
        SuperpixelState { spectral, spatial },
        GridInit {
            cell_of_pixel,
            cell_size,
        },
    ))
}

/// Backward of the grid seeding: centroid gradients spread uniformly over the
/// pixels of each cell.
pub fn init_grid_backward(grid: &GridInit, g_spectral: &Array2<f64>, g_features: &mut Array2<f64>) {
    let d = g_features.ncols();
    let slab = g_features.as_slice_mut().expect("contiguous");
    exec::for_each_chunk_mut(slab, PIXEL_CHUNK * d, |k, chunk| {
        let base = k * PIXEL_CHUNK;
        for (row, out) in chunk.chunks_mut(d).enumerate() {
            let i = base + row;
            let j = grid.cell_of_pixel[i] as usize;
            let inv = 1.0 / grid.cell_size[j] as f64;
            for (b, o) in out.iter_mut().enumerate() {
                *o += g_spectral[[j, b]] * inv;
            }
        }
    });
}

/// For each pixel, the `g` spatially nearest superpixels (ties broken by
/// lower index), ordered by (distance, index). `g` is clamped to M.
pub fn candidate_superpixels(
    state: &SuperpixelState,
    coords: &Array2<f64>,
    g: usize,
) -> Array2<u32> {
    let n = coords.nrows();
    let m = state.count();
    let g = g.min(m);
    let mut candidates = Array2::<u32>::zeros((n, g));
    let slab = candidates.as_slice_mut().expect("contiguous");
    exec::for_each_chunk_mut(slab, PIXEL_CHUNK * g, |k, chunk| {
        let base = k * PIXEL_CHUNK;
        // Top-G selection by insertion into a small sorted buffer; ties keep
        // the lower index because insertion is in ascending j order and a tie
        // does not displace an earlier entry.
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(g);
        for (row, out) in chunk.chunks_mut(g).enumerate() {
            let i = base + row;
            let (pr, pc) = (coords[[i, 0]], coords[[i, 1]]);
            best.clear();
            for j in 0..m {
                let dr = pr - state.spatial[[j, 0]];
                let dc = pc - state.spatial[[j, 1]];
                let dist = dr * dr + dc * dc;
                if best.len() == g && dist >= best[g - 1].0 {
                    continue;
                }
                let pos = best.partition_point(|&(d, _)| d <= dist);
                if best.len() == g {
                    best.pop();
                }
                best.insert(pos, (dist, j as u32));
            }
            for (slot, &(_, j)) in out.iter_mut().zip(best.iter()) {
                *slot = j;
            }
        }
    });
    candidates
}

/// Compactness-weighted distances d_ij = w_j·‖x′_i − s_j‖² + (1−w_j)·‖r_i − r_j‖²
/// evaluated on each pixel's candidate set.
pub fn compute_distances(
    feat: &AdaptedFeatures,
    state: &SuperpixelState,
    weights: &Array1<f64>,
    candidates: &Array2<u32>,
) -> Array2<f64> {
    let (n, g) = candidates.dim();
    let d = feat.features.ncols();
    let _ = n;
    let mut dist = Array2::<f64>::zeros((n, g));
    let slab = dist.as_slice_mut().expect("contiguous");
    exec::for_each_chunk_mut(slab, PIXEL_CHUNK * g, |k, chunk| {
        let base = k * PIXEL_CHUNK;
        for (row, out) in chunk.chunks_mut(g).enumerate() {
            let i = base + row;
            let x = feat.features.row(i);
            let (pr, pc) = (feat.coords[[i, 0]], feat.coords[[i, 1]]);
            for (slot, out_v) in out.iter_mut().enumerate() {
                let j = candidates[[i, slot]] as usize;
                let mut spec = 0.0;
                for b in 0..d {
                    let e = x[b] - state.spectral[[j, b]];
                    spec += e * e;
                }
                let dr = pr - state.spatial[[j, 0]];
                let dc = pc - state.spatial[[j, 1]];
                let spat = dr * dr + dc * dc;
                let w = weights[j];
                *out_v = w * spec + (1.0 - w) * spat;
            }
        }
    });
    dist
}

/// Inverted candidate index: for each superpixel j, the (pixel, slot) pairs
/// that carry j, in pixel scan order. Makes per-superpixel reductions
/// deterministic and parallel over j.
pub struct CandidateIndex {
    offsets: Vec<usize>,
    entries: Vec<(u32, u8)>,
}

impl CandidateIndex {
    pub fn build(candidates: &Array2<u32>, m: usize) -> CandidateIndex {
        let (n, g) = candidates.dim();
        let mut counts = vec![0usize; m];
        for &j in candidates.iter() {
            counts[j as usize] += 1;
        }
        let mut offsets = vec![0usize; m + 1];
        for j in 0..m {
            offsets[j + 1] = offsets[j] + counts[j];
        }
        let mut entries = vec![(0u32, 0u8); offsets[m]];
        let mut cursor = offsets.clone();
        for i in 0..n {
            for slot in 0..g {
                let j = candidates[[i, slot]] as usize;
                entries[cursor[j]] = (i as u32, slot as u8);
                cursor[j] += 1;
            }
        }
        CandidateIndex { offsets, entries }
    }

    pub fn pixels_of(&self, j: usize) -> &[(u32, u8)] {
        &self.entries[self.offsets[j]..self.offsets[j + 1]]
    }
}

/// Row-wise temperature softmax of −dist/τ over the candidate set, with
/// max-subtraction for stability.
pub fn soft_assign(dist: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    if !(tau > 0.0) {
        return Err(Error::validation(format!("tau must be positive, got {tau}")));
    }
    let (n, g) = dist.dim();
    let _ = n;
    let mut probs = Array2::<f64>::zeros((n, g));
    let slab = probs.as_slice_mut().expect("contiguous");
    exec::for_each_chunk_mut(slab, PIXEL_CHUNK * g, |k, chunk| {
        let base = k * PIXEL_CHUNK;
        for (row, out) in chunk.chunks_mut(g).enumerate() {
            let i = base + row;
            let mut lo = f64::INFINITY;
            for slot in 0..g {
                lo = lo.min(dist[[i, slot]]);
            }
            let mut sum = 0.0;
            for (slot, o) in out.iter_mut().enumerate() {
                let e = (-(dist[[i, slot]] - lo) / tau).exp();
                *o = e;
                sum += e;
            }
            for o in out.iter_mut() {
                *o /= sum;
            }
        }
    });
    Ok(probs)
}

/// Backward of the row softmax: g_dist = −(P/τ)·(g_P − ⟨g_P, P⟩) per row.
pub fn soft_assign_backward(probs: &Array2<f64>, g_probs: &Array2<f64>, tau: f64) -> Array2<f64> {
    let (n, g) = probs.dim();
    let _ = n;
    let mut g_dist = Array2::<f64>::zeros((n, g));
    let slab = g_dist.as_slice_mut().expect("contiguous");
    exec::for_each_chunk_mut(slab, PIXEL_CHUNK * g, |k, chunk| {
        let base = k * PIXEL_CHUNK;
        for (row, out) in chunk.chunks_mut(g).enumerate() {
            let i = base + row;
            let mut inner = 0.0;
            for slot in 0..g {
                inner += g_probs[[i, slot]] * probs[[i, slot]];
            }
            for (slot, o) in out.iter_mut().enumerate() {
                *o = -(probs[[i, slot]] / tau) * (g_probs[[i, slot]] - inner);
            }
        }
    });
    g_dist
}

/// Backward of [`compute_distances`]. Accumulates into the feature, centroid,
/// and weight gradients.
#[allow(clippy::too_many_arguments)]
pub fn distances_backward(
    feat: &AdaptedFeatures,
    state: &SuperpixelState,
    weights: &Array1<f64>,
    candidates: &Array2<u32>,
    index: &CandidateIndex,
    g_dist: &Array2<f64>,
    g_features: &mut Array2<f64>,
    g_spectral: &mut Array2<f64>,
    g_spatial: &mut Array2<f64>,
    g_weights: &mut Array1<f64>,
) {
    let d = feat.features.ncols();
    // Pixel-side gradient: map over pixels.
    {
        let slab = g_features.as_slice_mut().expect("contiguous");
        exec::for_each_chunk_mut(slab, PIXEL_CHUNK * d, |k, chunk| {
            let base = k * PIXEL_CHUNK;
            for (row, out) in chunk.chunks_mut(d).enumerate() {
                let i = base + row;
                for slot in 0..candidates.ncols() {
                    let gd = g_dist[[i, slot]];
                    if gd == 0.0 {
                        continue;
                    }
                    let j = candidates[[i, slot]] as usize;
                    let w = weights[j];
                    for (b, o) in out.iter_mut().enumerate() {
                        *o += gd * 2.0 * w * (feat.features[[i, b]] - state.spectral[[j, b]]);
                    }
                }
            }
        });
    }
    // Superpixel-side gradients: reduction over each j's candidate pixels.
    let m = state.count();
    let mut packed = vec![0.0f64; m * (d + 3)];
    exec::for_each_chunk_mut(&mut packed, d + 3, |j, out| {
        let (g_spec, rest) = out.split_at_mut(d);
        let w = weights[j];
        for &(i, slot) in index.pixels_of(j) {
            let (i, slot) = (i as usize, slot as usize);
            let gd = g_dist[[i, slot]];
            if gd == 0.0 {
                continue;
            }
            let mut spec = 0.0;
            for (b, gs) in g_spec.iter_mut().enumerate() {
                let e = feat.features[[i, b]] - state.spectral[[j, b]];
                spec += e * e;
                *gs += -gd * 2.0 * w * e;
            }
            let dr = feat.coords[[i, 0]] - state.spatial[[j, 0]];
            let dc = feat.coords[[i, 1]] - state.spatial[[j, 1]];
            rest[0] += -gd * 2.0 * (1.0 - w) * dr;
            rest[1] += -gd * 2.0 * (1.0 - w) * dc;
            rest[2] += gd * (spec - (dr * dr + dc * dc));
        }
    });
    for j in 0..m {
        let row = &packed[j * (d + 3)..(j + 1) * (d + 3)];
        for b in 0..d {
            g_spectral[[j, b]] += row[b];
        }
        g_spatial[[j, 0]] += row[d];
        g_spatial[[j, 1]] += row[d + 1];
        g_weights[j] += row[d + 2];
    }
}

/// Soft centroid denominators Σ_i p_ij + ε for each superpixel.
pub fn center_denominators(probs: &Array2<f64>, index: &CandidateIndex, m: usize) -> Vec<f64> {
    let mut den = vec![0.0f64; m];
    exec::for_each_chunk_mut(&mut den, 1, |j, out| {
        let mut sum = 0.0;
        for &(i, slot) in index.pixels_of(j) {
            sum += probs[[i as usize, slot as usize]];
        }
        out[0] = sum + EPS_DEN;
    });
    den
}

/// Soft centroid update: probability-weighted means of features and
/// coordinates over each superpixel's candidate pixels.
pub fn update_centers(
    feat: &AdaptedFeatures,
    probs: &Array2<f64>,
    index: &CandidateIndex,
    m: usize,
) -> (SuperpixelState, Vec<f64>) {
    let d = feat.features.ncols();
    let den = center_denominators(probs, index, m);
    let mut packed = vec![0.0f64; m * (d + 2)];
    exec::for_each_chunk_mut(&mut packed, d + 2, |j, out| {
        for &(i, slot) in index.pixels_of(j) {
            let (i, slot) = (i as usize, slot as usize);
            let p = probs[[i, slot]];
            for (b, o) in out.iter_mut().take(d).enumerate() {
                *o += p * feat.features[[i, b]];
            }
            out[d] += p * feat.coords[[i, 0]];
            out[d + 1] += p * feat.coords[[i, 1]];
        }
        let inv = 1.0 / den[j];
        for o in out.iter_mut() {
            *o *= inv;
        }
    });
    let mut spectral = Array2::<f64>::zeros((m, d));
    let mut spatial = Array2::<f64>::zeros((m, 2));
    for j in 0..m {
        let row = &packed[j * (d + 2)..(j + 1) * (d + 2)];
        for b in 0..d {
            spectral[[j, b]] = row[b];
        }
        spatial[[j, 0]] = row[d];
        spatial[[j, 1]] = row[d + 1];
    }
    (SuperpixelState { spectral, spatial }, den)
}

/// Backward of [`update_centers`]: distributes centroid gradients to the
/// assignment probabilities and the features.
#[allow(clippy::too_many_arguments)]
pub fn centers_backward(
    feat: &AdaptedFeatures,
    state: &SuperpixelState,
    probs: &Array2<f64>,
    candidates: &Array2<u32>,
    den: &[f64],
    g_spectral: &Array2<f64>,
    g_spatial: &Array2<f64>,
    g_probs: &mut Array2<f64>,
    g_features: &mut Array2<f64>,
) {
    let (_, g) = candidates.dim();
    let d = feat.features.ncols();
    {
        let slab = g_probs.as_slice_mut().expect("contiguous");
        exec::for_each_chunk_mut(slab, PIXEL_CHUNK * g, |k, chunk| {
            let base = k * PIXEL_CHUNK;
            for (row, out) in chunk.chunks_mut(g).enumerate() {
                let i = base + row;
                for (slot, o) in out.iter_mut().enumerate() {
                    let j = candidates[[i, slot]] as usize;
                    let inv = 1.0 / den[j];
                    let mut acc = 0.0;
                    for b in 0..d {
                        acc +=
                            g_spectral[[j, b]] * (feat.features[[i, b]] - state.spectral[[j, b]]);
                    }
                    acc += g_spatial[[j, 0]] * (feat.coords[[i, 0]] - state.spatial[[j, 0]]);
                    acc += g_spatial[[j, 1]] * (feat.coords[[i, 1]] - state.spatial[[j, 1]]);
                    *o += acc * inv;
                }
            }
        });
    }
    {
        let slab = g_features.as_slice_mut().expect("contiguous");
        exec::for_each_chunk_mut(slab, PIXEL_CHUNK * d, |k, chunk| {
            let base = k * PIXEL_CHUNK;
            for (row, out) in chunk.chunks_mut(d).enumerate() {
                let i = base + row;
                for slot in 0..g {
                    let j = candidates[[i, slot]] as usize;
                    let scale = probs[[i, slot]] / den[j];
                    if scale == 0.0 {
                        continue;
                    }
                    for (b, o) in out.iter_mut().enumerate() {
                        *o += scale * g_spectral[[j, b]];
                    }
                }
            }
        });
    }
}

/// Hard labels: per-row argmax of the probabilities, ties resolved to the
/// lowest superpixel index.
pub fn hard_labels(probs: &Array2<f64>, candidates: &Array2<u32>) -> Vec<u32> {
    let (n, g) = probs.dim();
    let mut hard = vec![0u32; n];
    exec::for_each_chunk_mut(&mut hard, PIXEL_CHUNK, |k, chunk| {
        let base = k * PIXEL_CHUNK;
        for (row, out) in chunk.iter_mut().enumerate() {
            let i = base + row;
            let mut best_p = f64::NEG_INFINITY;
            let mut best_j = u32::MAX;
            for slot in 0..g {
                let p = probs[[i, slot]];
                let j = candidates[[i, slot]];
                if p > best_p || (p == best_p && j < best_j) {
                    best_p = p;
                    best_j = j;
                }
            }
            *out = best_j;
        }
    });
    hard
}

/// One refinement round and everything the backward pass needs to replay it.
#[derive(Debug, Clone)]
pub struct SpixelIteration {
    pub candidates: Array2<u32>,
    pub dist: Array2<f64>,
    pub probs: Array2<f64>,
    /// State *entering* the round (distances were computed against it).
    pub state_in: SuperpixelState,
    /// Denominators of the centroid update that produced `state_out`.
    pub den: Vec<f64>,
    pub state_out: SuperpixelState,
}

/// Full forward trace of the iterative assignment.
#[derive(Debug, Clone)]
pub struct SpixelTrace {
    pub grid: GridInit,
    pub init_state: SuperpixelState,
    pub iterations: Vec<SpixelIteration>,
    pub assignment: SoftAssignment,
}

impl SpixelTrace {
    pub fn final_state(&self) -> &SuperpixelState {
        self.iterations
            .last()
            .map(|it| &it.state_out)
            .unwrap_or(&self.init_state)
    }
}

/// Iterative superpixel assignment: grid seeding, then `iters` rounds of
/// candidate refresh → distances → softmax → centroid update, then hard
/// labels from the final probabilities.
#[allow(clippy::too_many_arguments)]
pub fn run_superpixels(
    feat: &AdaptedFeatures,
    weights: &CompactnessWeights,
    height: usize,
    width: usize,
    m: usize,
    iters: usize,
    g: usize,
    tau: f64,
) -> Result<SpixelTrace> {
    if iters == 0 {
        return Err(Error::validation("iteration count must be >= 1"));
    }
    let (init_state, grid) = init_grid(feat, height, width, m)?;
    let w_eff = weights.effective();
    let mut state = init_state.clone();
    let mut iterations = Vec::with_capacity(iters);
    for _ in 0..iters {
        let candidates = candidate_superpixels(&state, &feat.coords, g);
        let index = CandidateIndex::build(&candidates, m);
        let dist = compute_distances(feat, &state, &w_eff, &candidates);
        let probs = soft_assign(&dist, tau)?;
        let (next, den) = update_centers(feat, &probs, &index, m);
        iterations.push(SpixelIteration {
            candidates,
            dist,
            probs,
            state_in: state,
            den,
            state_out: next.clone(),
        });
        state = next;
    }
    let last = iterations.last().expect("at least one iteration");
    let hard = hard_labels(&last.probs, &last.candidates);
    let assignment = SoftAssignment {
        candidates: last.candidates.clone(),
        probs: last.probs.clone(),
        tau,
        hard,
    };
    Ok(SpixelTrace {
        grid,
        init_state,
        iterations,
        assignment,
    })
}

/// Quantized features F: each pixel replaced by the spectral centroid of its
/// hard superpixel. Gradient flows into the centroids, not the labels.
pub fn quantized_features(state: &SuperpixelState, hard: &[u32]) -> Array2<f64> {
    let d = state.spectral.ncols();
    let mut f = Array2::<f64>::zeros((hard.len(), d));
    let slab = f.as_slice_mut().expect("contiguous");
    exec::for_each_chunk_mut(slab, PIXEL_CHUNK * d, |k, chunk| {
        let base = k * PIXEL_CHUNK;
        for (row, out) in chunk.chunks_mut(d).enumerate() {
            let j = hard[base + row] as usize;
            for (b, o) in out.iter_mut().enumerate() {
                *o = state.spectral[[j, b]];
            }
        }
    });
    f
}

// ---------------------------------------------------------------------------
// Connectivity cleanup
// ---------------------------------------------------------------------------

/// Make every label's pixel set 4-connected: split disconnected components,
/// absorb components smaller than N/(4M) into the neighbor sharing the
/// longest boundary, and relabel densely in scan order. Operates outside the
/// gradient path.
pub fn enforce_connectivity(hard: &[u32], height: usize, width: usize, m: usize) -> Vec<u32> {
    let n = height * width;
    assert_eq!(hard.len(), n);
    let min_size = ((n as f64) / (4.0 * m as f64)).max(1.0);

    // Label connected components of equal input label.
    let mut comp = vec![u32::MAX; n];
    let mut comp_size: Vec<u32> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = comp_size.len() as u32;
        let label = hard[start];
        let mut size = 0u32;
        stack.push(start);
        comp[start] = id;
        while let Some(i) = stack.pop() {
            size += 1;
            let (r, c) = (i / width, i % width);
            let visit = |ni: usize, comp: &mut Vec<u32>, stack: &mut Vec<usize>| {
                if comp[ni] == u32::MAX && hard[ni] == label {
                    comp[ni] = id;
                    stack.push(ni);
                }
            };
            if r > 0 {
                visit(i - width, &mut comp, &mut stack);
            }
            if r + 1 < height {
                visit(i + width, &mut comp, &mut stack);
            }
            if c > 0 {
                visit(i - 1, &mut comp, &mut stack);
            }
            if c + 1 < width {
                visit(i + 1, &mut comp, &mut stack);
            }
        }
        comp_size.push(size);
    }

    // Union-find over components; absorb small ones into the neighboring
    // component with the longest shared boundary, repeating until stable.
    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }
    let mut parent: Vec<u32> = (0..comp_size.len() as u32).collect();
    let mut sizes = comp_size.clone();
    loop {
        let mut boundary: std::collections::HashMap<(u32, u32), u32> =
            std::collections::HashMap::new();
        for r in 0..height {
            for c in 0..width {
                let i = r * width + c;
                let a = find(&mut parent, comp[i]);
                if c + 1 < width {
                    let b = find(&mut parent, comp[i + 1]);
                    if a != b {
                        *boundary.entry((a.min(b), a.max(b))).or_insert(0) += 1;
                    }
                }
                if r + 1 < height {
                    let b = find(&mut parent, comp[i + width]);
                    if a != b {
                        *boundary.entry((a.min(b), a.max(b))).or_insert(0) += 1;
                    }
                }
            }
        }
        let roots: Vec<u32> = (0..parent.len() as u32)
            .filter(|&x| find(&mut parent, x) == x)
            .collect();
        let mut merged_any = false;
        for &root in &roots {
            if find(&mut parent, root) != root {
                continue; // absorbed earlier in this pass
            }
            if (sizes[root as usize] as f64) >= min_size {
                continue;
            }
            // Longest shared boundary; ties to the lower component id.
            let mut best: Option<(u32, u32)> = None;
            for (&(a, b), &len) in boundary.iter() {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                let other = if ra == root && rb != root {
                    rb
                } else if rb == root && ra != root {
                    ra
                } else {
                    continue;
                };
                best = match best {
                    None => Some((len, other)),
                    Some((bl, bo)) => {
                        if len > bl || (len == bl && other < bo) {
                            Some((len, other))
                        } else {
                            Some((bl, bo))
                        }
                    }
                };
            }
            if let Some((_, target)) = best {
                let t = find(&mut parent, target);
                parent[root as usize] = t;
                sizes[t as usize] += sizes[root as usize];
                merged_any = true;
            }
        }
        if !merged_any {
            break;
        }
    }

    // Dense relabel in scan order.
    let mut dense: std::collections::HashMap<u32, u32> = std::collections::HashMap::new();
    let mut out = vec![0u32; n];
    for i in 0..n {
        let root = find(&mut parent, comp[i]);
        let next = dense.len() as u32;
        let id = *dense.entry(root).or_insert(next);
        out[i] = id;
    }
    out
}
