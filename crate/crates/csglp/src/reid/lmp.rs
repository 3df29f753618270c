//! Local Max Pooling: split the final feature map into P horizontal bands
//! and max-pool each band per channel.
//!
//! Bands partition the vertical axis as equally as possible, with the
//! remainder rows going to the topmost bands; descriptors concatenate the
//! bands top-to-bottom, each contributing one value per channel.

use ndarray::Array3;

use crate::error::{Error, Result};

/// Row ranges `(start, end)` of the P bands of a height-`h` map.
pub fn band_ranges(h: usize, p: usize) -> Result<Vec<(usize, usize)>> {
    if p == 0 {
        return Err(Error::config("lmp band count must be >= 1"));
    }
    if p > h {
        return Err(Error::config(format!(
            "lmp band count {p} exceeds feature map height {h}"
        )));
    }
    let base = h / p;
    let rem = h % p;
    let mut out = Vec::with_capacity(p);
    let mut row = 0;
    for i in 0..p {
        let len = base + usize::from(i < rem);
        out.push((row, row + len));
        row += len;
    }
    debug_assert_eq!(row, h);
    Ok(out)
}

/// Pool a (C, h, w) feature map into a `P * C` descriptor, band-major.
pub fn lmp_pool(map: &Array3<f64>, p: usize) -> Result<Vec<f64>> {
    let (c, h, w) = map.dim();
    let ranges = band_ranges(h, p)?;
    let mut out = Vec::with_capacity(p * c);
    for &(r0, r1) in &ranges {
        for ci in 0..c {
            let mut m = f64::NEG_INFINITY;
            for y in r0..r1 {
                for x in 0..w {
                    m = m.max(map[[ci, y, x]]);
                }
            }
            out.push(m);
        }
    }
    Ok(out)
}

/// Flat indices (into a (C,h,w) map in standard layout) of each band/channel
/// argmax, band-major; ties go to the first position in scan order.
pub fn lmp_argmax_indices(map: &Array3<f64>, p: usize) -> Result<Vec<usize>> {
    let (c, h, w) = map.dim();
    let ranges = band_ranges(h, p)?;
    let mut out = Vec::with_capacity(p * c);
    for &(r0, r1) in &ranges {
        for ci in 0..c {
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0;
            for y in r0..r1 {
                for x in 0..w {
                    let v = map[[ci, y, x]];
                    if v > best {
                        best = v;
                        best_idx = (ci * h + y) * w + x;
                    }
                }
            }
            out.push(best_idx);
        }
    }
    Ok(out)
}
