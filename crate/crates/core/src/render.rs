//! Label-map rendering as binary PPM with a seeded random color table.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;

/// Palette seed shared by every render so repeated runs are byte-identical.
pub const PALETTE_SEED: u64 = 0x5eed_c010;

/// Distinct random colors for labels `0..count`. Label 0 maps to black when
/// `zero_is_black` (the unlabeled convention for ground-truth maps).
pub fn palette(count: usize, zero_is_black: bool) -> Vec<[u8; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(PALETTE_SEED);
    let mut used = std::collections::HashSet::new();
    let mut colors = Vec::with_capacity(count);
    if zero_is_black {
        colors.push([0u8, 0, 0]);
        used.insert([0u8, 0, 0]);
    }
    while colors.len() < count {
        let c = [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()];
        if used.insert(c) {
            colors.push(c);
        }
    }
    colors
}

/// Write labels as a P6 PPM image.
pub fn write_ppm<W: Write>(
    labels: &[u32],
    height: usize,
    width: usize,
    zero_is_black: bool,
    out: &mut W,
) -> Result<()> {
    if labels.len() != height * width {
        return Err(Error::validation(format!(
            "label buffer has {} entries for a {height}x{width} image",
            labels.len()
        )));
    }
    let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
    let colors = palette(max_label + 1, zero_is_black);
    let mut buf = Vec::with_capacity(labels.len() * 3 + 32);
    buf.extend_from_slice(format!("P6\n{width} {height}\n255\n").as_bytes());
    for &l in labels {
        buf.extend_from_slice(&colors[l as usize]);
    }
    out.write_all(&buf)
        .map_err(|e| Error::io("<ppm stream>", format!("write failed: {e}")))?;
    Ok(())
}
