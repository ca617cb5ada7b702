//! Hyperspectral cube loading, standardization, synthesis, and the
//! superpixel-count rule.
//!
//! On-disk format is a minimal self-describing pair: `<name>.hsi.json` header
//! plus `<name>.hsi.raw` holding `N·D` little-endian f32 values, pixel-major
//! and band-interleaved. Label maps use `<name>.lbl.json` + `<name>.lbl.raw`
//! with little-endian u16 per pixel, 0 meaning unlabeled.

use crate::error::{Error, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// A hyperspectral image: `N = height·width` pixels by `D = bands` values,
/// row-major by pixel, plus the per-band statistics recorded by
/// [`standardize`].
#[derive(Debug, Clone)]
pub struct HsiCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// N×D, pixel-major.
    pub values: Array2<f64>,
    pub band_mean: Vec<f64>,
    pub band_std: Vec<f64>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Array2<f64>) -> Result<Self> {
        let n = height * width;
        if n == 0 || bands == 0 {
            return Err(Error::validation("cube must have N > 0 and D >= 1"));
        }
        if values.dim() != (n, bands) {
            return Err(Error::validation(format!(
                "value matrix is {:?}, expected ({n}, {bands})",
                values.dim()
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite value at flat index {idx} (pixel {}, band {})",
                idx / bands,
                idx % bands
            )));
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            values,
            band_mean: vec![0.0; bands],
            band_std: vec![1.0; bands],
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Pixel-level class labels; 0 = unlabeled.
#[derive(Debug, Clone)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of distinct nonzero labels.
    pub fn classes(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for &l in &self.labels {
            if l != 0 {
                seen.insert(l);
            }
        }
        seen.len()
    }

    /// Remap nonzero labels onto 1..=classes, preserving numeric order.
    pub fn densify(&self) -> LabelMap {
        let distinct: std::collections::BTreeSet<u16> =
            self.labels.iter().copied().filter(|&l| l != 0).collect();
        let mut map = std::collections::HashMap::new();
        for (i, l) in distinct.iter().enumerate() {
            map.insert(*l, (i + 1) as u16);
        }
        LabelMap {
            height: self.height,
            width: self.width,
            labels: self.labels.iter().map(|l| *map.get(l).unwrap_or(&0)).collect(),
        }
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CubeHeader {
    height: usize,
    width: usize,
    bands: usize,
    dtype: String,
    order: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelHeader {
    height: usize,
    width: usize,
    dtype: String,
}

fn raw_companion(header_path: &Path, header_ext: &str, raw_ext: &str) -> Result<PathBuf> {
    let s = header_path.to_string_lossy();
    if !s.ends_with(header_ext) {
        return Err(Error::validation(format!(
            "expected a {header_ext} header path, got {s}"
        )));
    }
    Ok(PathBuf::from(format!(
        "{}{raw_ext}",
        &s[..s.len() - header_ext.len()]
    )))
}

fn read_exact_file(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::io(path, format!("cannot open raw file: {e}")))?;
    let mut buf = Vec::with_capacity(expected);
    file.read_to_end(&mut buf)
        .map_err(|e| Error::io(path, format!("read failed: {e}")))?;
    if buf.len() != expected {
        return Err(Error::io(
            path,
            format!("expected {expected} bytes, found {}", buf.len()),
        ));
    }
    Ok(buf)
}

/// Load a cube from its `.hsi.json` header; the `.hsi.raw` companion must sit
/// next to it. No standardization is applied.
pub fn load_cube(header_path: impl AsRef<Path>) -> Result<HsiCube> {
    let header_path = header_path.as_ref();
    let header_text = std::fs::read_to_string(header_path)
        .map_err(|e| Error::io(header_path, format!("cannot read header: {e}")))?;
    let header: CubeHeader = serde_json::from_str(&header_text)
        .map_err(|e| Error::validation(format!("bad cube header: {e}")))?;
    if header.dtype != "f32le" || header.order != "bip" {
        return Err(Error::validation(format!(
            "unsupported cube encoding dtype={} order={}",
            header.dtype, header.order
        )));
    }
    let n = header.height * header.width;
    let expected = n * header.bands * 4;
    let raw_path = raw_companion(header_path, ".hsi.json", ".hsi.raw")?;
    let buf = read_exact_file(&raw_path, expected)?;
    let mut values = Vec::with_capacity(n * header.bands);
    for chunk in buf.chunks_exact(4) {
        values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    let values =
        Array2::from_shape_vec((n, header.bands), values).expect("shape checked against byte count");
    HsiCube::new(header.height, header.width, header.bands, values)
}

/// Write a cube as the header + raw pair. Values are stored as f32.
pub fn save_cube(cube: &HsiCube, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    let header = CubeHeader {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        dtype: "f32le".into(),
        order: "bip".into(),
    };
    let raw_path = raw_companion(header_path, ".hsi.json", ".hsi.raw")?;
    std::fs::write(header_path, serde_json::to_string_pretty(&header).unwrap())
        .map_err(|e| Error::io(header_path, format!("write failed: {e}")))?;
    let mut buf = Vec::with_capacity(cube.values.len() * 4);
    for &v in cube.values.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(&raw_path)
        .map_err(|e| Error::io(&raw_path, format!("create failed: {e}")))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(&raw_path, format!("write failed: {e}")))?;
    Ok(())
}

/// Load a label map from its `.lbl.json` header.
pub fn load_labels(header_path: impl AsRef<Path>) -> Result<LabelMap> {
    let header_path = header_path.as_ref();
    let header_text = std::fs::read_to_string(header_path)
        .map_err(|e| Error::io(header_path, format!("cannot read header: {e}")))?;
    let header: LabelHeader = serde_json::from_str(&header_text)
        .map_err(|e| Error::validation(format!("bad label header: {e}")))?;
    if header.dtype != "u16le" {
        return Err(Error::validation(format!(
            "unsupported label dtype {}",
            header.dtype
        )));
    }
    let n = header.height * header.width;
    let raw_path = raw_companion(header_path, ".lbl.json", ".lbl.raw")?;
    let buf = read_exact_file(&raw_path, n * 2)?;
    let labels = buf
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(LabelMap {
        height: header.height,
        width: header.width,
        labels,
    })
}

/// Write a label map as the header + raw pair.
pub fn save_labels(labels: &LabelMap, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    let header = LabelHeader {
        height: labels.height,
        width: labels.width,
        dtype: "u16le".into(),
    };
    let raw_path = raw_companion(header_path, ".lbl.json", ".lbl.raw")?;
    std::fs::write(header_path, serde_json::to_string_pretty(&header).unwrap())
        .map_err(|e| Error::io(header_path, format!("write failed: {e}")))?;
    let mut buf = Vec::with_capacity(labels.labels.len() * 2);
    for &l in &labels.labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    std::fs::write(&raw_path, buf)
        .map_err(|e| Error::io(&raw_path, format!("write failed: {e}")))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-band z-scoring with population statistics. Constant bands (std below
/// 1e-12) keep std 1 and map to 0, so the transform never divides by zero.
pub fn standardize(cube: &HsiCube) -> HsiCube {
    let n = cube.pixels() as f64;
    let d = cube.bands;
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for row in cube.values.rows() {
        for (j, v) in row.iter().enumerate() {
            mean[j] += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    for row in cube.values.rows() {
        for (j, v) in row.iter().enumerate() {
            let c = v - mean[j];
            std[j] += c * c;
        }
    }
    for s in std.iter_mut() {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let mut values = cube.values.clone();
    for mut row in values.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[j]) / std[j];
        }
    }
    HsiCube {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        values,
        band_mean: mean,
        band_std: std,
    }
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionLayout {
    Blocks,
    Voronoi,
}

/// Recipe for a synthetic union-of-subspaces cube.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub subspace_dim: usize,
    pub noise_sigma: f64,
    pub region_layout: RegionLayout,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.subspace_dim >= self.bands {
            return Err(Error::validation(format!(
                "subspace_dim {} must be < bands {}",
                self.subspace_dim, self.bands
            )));
        }
        if self.classes < 2 {
            return Err(Error::validation("classes must be >= 2"));
        }
        if self.height * self.width == 0 || self.subspace_dim == 0 {
            return Err(Error::validation("degenerate synthetic geometry"));
        }
        Ok(())
    }
}

/// Orthonormalize the columns of a random Gaussian D×K matrix (modified
/// Gram-Schmidt; redraws a column in the vanishing-probability case that it
/// collapses).
fn random_orthonormal(bands: usize, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut basis = Array2::<f64>::zeros((bands, k));
    for j in 0..k {
        loop {
            let mut col: Vec<f64> = (0..bands).map(|_| normal.sample(rng)).collect();
            for prev in 0..j {
                let dot: f64 = (0..bands).map(|i| col[i] * basis[[i, prev]]).sum();
                for (i, c) in col.iter_mut().enumerate() {
                    *c -= dot * basis[[i, prev]];
                }
            }
            let norm: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (i, c) in col.iter().enumerate() {
                    basis[[i, j]] = c / norm;
                }
                break;
            }
        }
    }
    basis
}

fn region_index(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<u16> {
    let (h, w, c) = (spec.height, spec.width, spec.classes);
    match spec.region_layout {
        RegionLayout::Blocks => {
            let grid_rows = ((c as f64).sqrt().floor() as usize).max(1);
            let grid_cols = c.div_ceil(grid_rows);
            let mut labels = Vec::with_capacity(h * w);
            for r in 0..h {
                for col in 0..w {
                    let br = (r * grid_rows / h).min(grid_rows - 1);
                    let bc = (col * grid_cols / w).min(grid_cols - 1);
                    let cell = br * grid_cols + bc;
                    labels.push((cell.min(c - 1) + 1) as u16);
                }
            }
            labels
        }
        RegionLayout::Voronoi => {
            let sites: Vec<(f64, f64)> = (0..c)
                .map(|_| {
                    (
                        rng.random_range(0.0..h as f64),
                        rng.random_range(0.0..w as f64),
                    )
                })
                .collect();
            let mut labels = Vec::with_capacity(h * w);
            for r in 0..h {
                for col in 0..w {
                    let mut best = 0usize;
                    let mut best_d = f64::INFINITY;
                    for (k, &(sr, sc)) in sites.iter().enumerate() {
                        let d = (r as f64 - sr).powi(2) + (col as f64 - sc).powi(2);
                        if d < best_d {
                            best_d = d;
                            best = k;
                        }
                    }
                    labels.push((best + 1) as u16);
                }
            }
            labels
        }
    }
}

/// Smooth random scalar field: bilinear interpolation of an iid N(0,1) grid
/// with ~8-pixel spacing. Gives spectra that vary gradually inside a region,
/// the way abundances do in real scenes.
fn smooth_field(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    const SPACING: f64 = 8.0;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let gr = (height as f64 / SPACING).ceil() as usize + 1;
    let gc = (width as f64 / SPACING).ceil() as usize + 1;
    let nodes: Vec<f64> = (0..gr * gc).map(|_| normal.sample(rng)).collect();
    let mut field = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let fr = (r as f64 / SPACING).min((gr - 1) as f64 - 1e-9);
            let fc = (c as f64 / SPACING).min((gc - 1) as f64 - 1e-9);
            let (r0, c0) = (fr as usize, fc as usize);
            let (tr, tc) = (fr - r0 as f64, fc - c0 as f64);
            let v = nodes[r0 * gc + c0] * (1.0 - tr) * (1.0 - tc)
                + nodes[r0 * gc + c0 + 1] * (1.0 - tr) * tc
                + nodes[(r0 + 1) * gc + c0] * tr * (1.0 - tc)
                + nodes[(r0 + 1) * gc + c0 + 1] * tr * tc;
            field.push(v);
        }
    }
    field
}

/// Draw a synthetic cube: one orthonormal basis per class and per-class
/// smooth coefficient fields, so each pixel's spectrum lies exactly in its
/// class subspace (before noise) while varying gradually across the scene.
/// Fully deterministic for a fixed spec.
pub fn make_synthetic(spec: &SynthSpec) -> Result<(HsiCube, LabelMap)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bases: Vec<Array2<f64>> = (0..spec.classes)
        .map(|_| random_orthonormal(spec.bands, spec.subspace_dim, &mut rng))
        .collect();
    let labels = region_index(spec, &mut rng);
    let n = spec.height * spec.width;
    // Coefficient fields: classes × subspace_dim smooth maps over the image.
    let fields: Vec<Vec<Vec<f64>>> = (0..spec.classes)
        .map(|_| {
            (0..spec.subspace_dim)
                .map(|_| smooth_field(spec.height, spec.width, &mut rng))
                .collect()
        })
        .collect();
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).unwrap())
    } else {
        None
    };
    let mut values = Array2::<f64>::zeros((n, spec.bands));
    for i in 0..n {
        let class = (labels[i] - 1) as usize;
        let basis = &bases[class];
        for b in 0..spec.bands {
            let mut v = 0.0;
            for k in 0..spec.subspace_dim {
                v += basis[[b, k]] * fields[class][k][i];
            }
            if let Some(nd) = &noise {
                v += nd.sample(&mut rng);
            }
            values[[i, b]] = v;
        }
    }
    let cube = HsiCube::new(spec.height, spec.width, spec.bands, values)?;
    let map = LabelMap {
        height: spec.height,
        width: spec.width,
        labels,
    };
    Ok((cube, map))
}

// ---------------------------------------------------------------------------
// Superpixel count rule
// ---------------------------------------------------------------------------

/// Edge-pixel count of the mean-band image: Sobel gradient magnitude
/// thresholded by Otsu's method. A stand-in for an external edge-density
/// estimator; always overridable from the CLI.
pub fn edge_pixel_count(cube: &HsiCube) -> usize {
    let (h, w) = (cube.height, cube.width);
    let mut mean_img = vec![0.0f64; h * w];
    for (i, row) in cube.values.rows().into_iter().enumerate() {
        mean_img[i] = row.sum() / cube.bands as f64;
    }
    let at = |r: i64, c: i64| -> f64 {
        let r = r.clamp(0, h as i64 - 1) as usize;
        let c = c.clamp(0, w as i64 - 1) as usize;
        mean_img[r * w + c]
    };
    let mut mag = vec![0.0f64; h * w];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let gx = -at(r - 1, c - 1) + at(r - 1, c + 1) - 2.0 * at(r, c - 1)
                + 2.0 * at(r, c + 1)
                - at(r + 1, c - 1)
                + at(r + 1, c + 1);
            let gy = -at(r - 1, c - 1) - 2.0 * at(r - 1, c) - at(r - 1, c + 1)
                + at(r + 1, c - 1)
                + 2.0 * at(r + 1, c)
                + at(r + 1, c + 1);
            mag[(r as usize) * w + c as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    let max_m = mag.iter().cloned().fold(0.0f64, f64::max);
    if max_m <= 0.0 {
        return 0;
    }
    let threshold = otsu_threshold(&mag, max_m);
    mag.iter().filter(|&&m| m > threshold).count()
}

fn otsu_threshold(values: &[f64], max_v: f64) -> f64 {
    const BINS: usize = 256;
    let mut hist = [0usize; BINS];
    for &v in values {
        let b = ((v / max_v) * (BINS as f64 - 1.0)).round() as usize;
        hist[b.min(BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mut sum_b = 0.0;
    let mut w_b = 0.0;
    let mut best = (0.0f64, 0usize);
    for (t, &c) in hist.iter().enumerate() {
        w_b += c as f64;
        if w_b == 0.0 {
            continue;
        }
        let w_f = total - w_b;
        if w_f == 0.0 {
            break;
        }
        sum_b += t as f64 * c as f64;
        let m_b = sum_b / w_b;
        let m_f = (sum_all - sum_b) / w_f;
        let between = w_b * w_f * (m_b - m_f) * (m_b - m_f);
        if between > best.0 {
            best = (between, t);
        }
    }
    best.1 as f64 / (BINS as f64 - 1.0) * max_v
}

/// Superpixel count: an explicit override wins; otherwise
/// `max(M_edge, ceil(50·C/R))` clamped to `[C, N/4]`, where `R` is the
/// labeled-area ratio (1 when no label map is given) and `M_edge` is the
/// edge-density estimate.
pub fn choose_superpixel_count(
    cube: &HsiCube,
    labels: Option<&LabelMap>,
    classes_hint: Option<usize>,
    override_m: Option<usize>,
) -> Result<usize> {
    if let Some(m) = override_m {
        if m == 0 || m > cube.pixels() {
            return Err(Error::validation(format!(
                "superpixel override {m} outside 1..=N"
            )));
        }
        return Ok(m);
    }
    let classes = match (labels, classes_hint) {
        (Some(map), _) if map.classes() > 0 => map.classes(),
        (_, Some(c)) if c > 0 => c,
        _ => {
            return Err(Error::config(
                "class count unknown: provide a label map, a classes value, or a superpixel override",
            ))
        }
    };
    let n = cube.pixels();
    let ratio = match labels {
        Some(map) => {
            let labeled = map.labeled_count();
            if labeled == 0 {
                1.0
            } else {
                labeled as f64 / n as f64
            }
        }
        None => 1.0,
    };
    let lower_bound = (50.0 * classes as f64 / ratio).ceil() as usize;
    let m_edge = edge_pixel_count(cube).div_ceil(64);
    let m = lower_bound.max(m_edge);
    Ok(m.clamp(classes, (n / 4).max(classes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_cube() -> HsiCube {
        let values = Array2::from_shape_vec(
            (4, 3),
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0],
        )
        .unwrap();
        HsiCube::new(2, 2, 3, values).unwrap()
    }

    #[test]
    fn header_roundtrip_and_sizes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.hsi.json");
        let cube = tiny_cube();
        save_cube(&cube, &path).unwrap();
        let back = load_cube(&path).unwrap();
        assert_eq!(back.pixels(), 4);
        assert_eq!(back.bands, 3);
        assert_eq!(back.values, cube.values);
        // Byte-identical re-save.
        let raw1 = std::fs::read(dir.path().join("t.hsi.raw")).unwrap();
        save_cube(&back, &path).unwrap();
        let raw2 = std::fs::read(dir.path().join("t.hsi.raw")).unwrap();
        assert_eq!(raw1, raw2);
    }

    #[test]
    fn short_raw_reports_expected_bytes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.hsi.json");
        save_cube(&tiny_cube(), &path).unwrap();
        let raw = dir.path().join("t.hsi.raw");
        let bytes = std::fs::read(&raw).unwrap();
        std::fs::write(&raw, &bytes[..44]).unwrap();
        let err = load_cube(&path).unwrap_err().to_string();
        assert!(err.contains("expected 48 bytes, found 44"), "{err}");
    }

    #[test]
    fn non_finite_rejected_with_index() {
        let mut values = Array2::<f64>::zeros((4, 3));
        values[[2, 1]] = f64::NAN;
        let err = HsiCube::new(2, 2, 3, values).unwrap_err().to_string();
        assert!(err.contains("pixel 2, band 1"), "{err}");
    }

    #[test]
    fn trento_shaped_header_arithmetic() {
        let header: CubeHeader = serde_json::from_str(
            r#"{"height":600,"width":166,"bands":63,"dtype":"f32le","order":"bip"}"#,
        )
        .unwrap();
        assert_eq!(header.height * header.width, 99_600);
        assert_eq!(header.bands, 63);
    }

    #[test]
    fn standardize_constant_and_two_point_bands() {
        let values = Array2::from_shape_vec(
            (2, 2),
            vec![
                1.0, 0.0, //
                1.0, 2.0,
            ],
        )
        .unwrap();
        let cube = HsiCube::new(1, 2, 2, values).unwrap();
        let z = standardize(&cube);
        assert_eq!(z.values[[0, 0]], 0.0);
        assert_eq!(z.values[[1, 0]], 0.0);
        assert_eq!(z.band_std[0], 1.0);
        assert!((z.values[[0, 1]] + 1.0).abs() < 1e-12);
        assert!((z.values[[1, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardize_zeroes_band_stats() {
        let spec = SynthSpec {
            height: 16,
            width: 16,
            bands: 4,
            classes: 2,
            subspace_dim: 2,
            noise_sigma: 0.1,
            region_layout: RegionLayout::Blocks,
            seed: 9,
        };
        let (cube, _) = make_synthetic(&spec).unwrap();
        let z = standardize(&cube);
        let n = z.pixels() as f64;
        for b in 0..z.bands {
            let mean: f64 = z.values.column(b).sum() / n;
            let var: f64 = z
                .values
                .column(b)
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / n;
            assert!(mean.abs() <= 1e-6, "band {b} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() <= 1e-6, "band {b} std {}", var.sqrt());
        }
        // Idempotent within 1e-6.
        let zz = standardize(&z);
        for (a, b) in z.values.iter().zip(zz.values.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn synthetic_pixels_lie_in_class_subspace() {
        let spec = SynthSpec {
            height: 8,
            width: 8,
            bands: 6,
            classes: 2,
            subspace_dim: 2,
            noise_sigma: 0.0,
            region_layout: RegionLayout::Blocks,
            seed: 4,
        };
        let (cube, map) = make_synthetic(&spec).unwrap();
        // Span a basis from a few sample pixels of each class, then check that
        // every pixel of the class has negligible projection residual.
        for class in 1..=2u16 {
            let idx: Vec<usize> = (0..map.len()).filter(|&i| map.labels[i] == class).collect();
            let rows: Vec<Vec<f64>> = idx
                .iter()
                .take(4)
                .map(|&i| cube.values.row(i).to_vec())
                .collect();
            let mut basis: Vec<Vec<f64>> = Vec::new();
            for r in &rows {
                let mut v = r.clone();
                for b in &basis {
                    let dot: f64 = v.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                    for (x, y) in v.iter_mut().zip(b.iter()) {
                        *x -= dot * y;
                    }
                }
                let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    basis.push(v.into_iter().map(|x| x / norm).collect());
                }
            }
            assert!(basis.len() <= 2);
            for &i in &idx {
                let row = cube.values.row(i);
                let mut res: Vec<f64> = row.to_vec();
                for b in &basis {
                    let dot: f64 = res.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                    for (x, y) in res.iter_mut().zip(b.iter()) {
                        *x -= dot * y;
                    }
                }
                let norm: f64 = res.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(norm <= 1e-8, "pixel {i} residual {norm}");
            }
        }
    }

    #[test]
    fn blocks_layout_gives_quadrants() {
        let spec = SynthSpec {
            height: 32,
            width: 32,
            bands: 4,
            classes: 4,
            subspace_dim: 2,
            noise_sigma: 0.0,
            region_layout: RegionLayout::Blocks,
            seed: 0,
        };
        let (_, map) = make_synthetic(&spec).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                let expect = 1 + (r / 16) * 2 + (c / 16);
                assert_eq!(map.labels[r * 32 + c] as usize, expect);
            }
        }
    }

    #[test]
    fn synthetic_deterministic() {
        let spec = SynthSpec {
            height: 8,
            width: 8,
            bands: 5,
            classes: 3,
            subspace_dim: 2,
            noise_sigma: 0.2,
            region_layout: RegionLayout::Voronoi,
            seed: 77,
        };
        let (a, la) = make_synthetic(&spec).unwrap();
        let (b, lb) = make_synthetic(&spec).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(la.labels, lb.labels);
    }

    #[test]
    fn synthetic_rejects_full_rank() {
        let spec = SynthSpec {
            height: 4,
            width: 4,
            bands: 3,
            classes: 2,
            subspace_dim: 3,
            noise_sigma: 0.0,
            region_layout: RegionLayout::Blocks,
            seed: 0,
        };
        assert!(make_synthetic(&spec).is_err());
    }

    #[test]
    fn superpixel_count_rule() {
        let spec = SynthSpec {
            height: 16,
            width: 16,
            bands: 4,
            classes: 4,
            subspace_dim: 2,
            noise_sigma: 0.0,
            region_layout: RegionLayout::Blocks,
            seed: 1,
        };
        let (cube, map) = make_synthetic(&spec).unwrap();
        // Flat cube: no edges, so the lower bound 50·C/R decides.
        let flat = HsiCube::new(16, 16, 4, Array2::zeros((256, 4))).unwrap();
        let m = choose_superpixel_count(&flat, None, Some(4), None).unwrap();
        // ceil(50·4/1) = 200, clamped to N/4 = 64 on this tiny image.
        assert_eq!(m, 64);
        // Override wins regardless.
        let m = choose_superpixel_count(&cube, Some(&map), None, Some(33)).unwrap();
        assert_eq!(m, 33);
        // Missing class information is a configuration error.
        assert!(choose_superpixel_count(&cube, None, None, None).is_err());
    }

    #[test]
    fn superpixel_count_trento_shape() {
        // Trento geometry: 600×166, 6 classes, 30214 labeled pixels.
        let n = 600 * 166;
        let flat = HsiCube::new(600, 166, 1, Array2::zeros((n, 1))).unwrap();
        let mut labels = vec![0u16; n];
        for (i, l) in labels.iter_mut().enumerate().take(30_214) {
            *l = (i % 6 + 1) as u16;
        }
        let map = LabelMap {
            height: 600,
            width: 166,
            labels,
        };
        let m = choose_superpixel_count(&flat, Some(&map), None, None).unwrap();
        let expected = (50.0 * 6.0 / (30_214.0 / n as f64)).ceil() as usize;
        assert_eq!(m, expected);
        assert_eq!(m, 989);
    }
}
