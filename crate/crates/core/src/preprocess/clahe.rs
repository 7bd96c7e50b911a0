//! Contrast-limited adaptive histogram equalization on one 8-bit plane.

use crate::error::{Error, Result};

const BINS: usize = 256;

/// Half-open pixel range covered by tile `i` of `tiles` along an axis.
pub(crate) fn tile_span(i: usize, tiles: usize, len: usize) -> (usize, usize) {
    (i * len / tiles, (i + 1) * len / tiles)
}

/// Clips `hist` at `limit` and spreads the excess uniformly over all bins;
/// the remainder left after the even split goes to evenly spaced bins.
pub(crate) fn clip_histogram(hist: &mut [u32; BINS], limit: u32) {
    let mut excess = 0u32;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let batch = excess / BINS as u32;
    let residual = (excess % BINS as u32) as usize;
    for h in hist.iter_mut() {
        *h += batch;
    }
    if residual > 0 {
        let step = (BINS / residual).max(1);
        for h in hist.iter_mut().step_by(step).take(residual) {
            *h += 1;
        }
    }
}

/// Equalization lookup table of a clipped histogram over `area` pixels.
fn tile_lut(hist: &[u32; BINS], area: usize) -> [u8; BINS] {
    let scale = 255.0 / area as f64;
    let mut lut = [0u8; BINS];
    let mut cdf = 0u64;
    for (l, &h) in lut.iter_mut().zip(hist) {
        cdf += u64::from(h);
        *l = (cdf as f64 * scale).round().clamp(0.0, 255.0) as u8;
    }
    lut
}

/// Absolute clip count for a tile of `area` pixels: `clip_limit` times the
/// mean bin height, never below one.
pub(crate) fn clip_count(clip_limit: f64, area: usize) -> u32 {
    ((clip_limit * area as f64 / BINS as f64) as u32).max(1)
}

/// Equalizes `plane` (row-major, `width x height`) with a `tiles x tiles`
/// grid. Tile mappings are blended bilinearly between tile centers.
pub fn clahe(plane: &[u8], width: usize, height: usize, clip_limit: f64, tiles: usize) -> Result<Vec<u8>> {
    if plane.len() != width * height {
        return Err(Error::shape("clahe", format!("{} pixels for {width}x{height}", plane.len())));
    }
    if tiles == 0 || width < tiles || height < tiles {
        return Err(Error::InvalidArgument(format!(
            "image {width}x{height} is smaller than the {tiles}x{tiles} tile grid"
        )));
    }
    if !(clip_limit > 0.0) {
        return Err(Error::InvalidArgument(format!("clip limit must be positive, got {clip_limit}")));
    }

    let mut luts = Vec::with_capacity(tiles * tiles);
    for ty in 0..tiles {
        let (y0, y1) = tile_span(ty, tiles, height);
        for tx in 0..tiles {
            let (x0, x1) = tile_span(tx, tiles, width);
            let mut hist = [0u32; BINS];
            for y in y0..y1 {
                for &v in &plane[y * width + x0..y * width + x1] {
                    hist[v as usize] += 1;
                }
            }
            let area = (y1 - y0) * (x1 - x0);
            clip_histogram(&mut hist, clip_count(clip_limit, area));
            luts.push(tile_lut(&hist, area));
        }
    }

    let centers = |len: usize| -> Vec<f64> {
        (0..tiles)
            .map(|i| {
                let (a, b) = tile_span(i, tiles, len);
                (a + b) as f64 / 2.0 - 0.5
            })
            .collect()
    };
    let (cx, cy) = (centers(width), centers(height));
    let xw: Vec<(usize, usize, f64)> = (0..width).map(|x| neighbours(&cx, x as f64)).collect();

    let mut out = vec![0u8; plane.len()];
    for y in 0..height {
        let (ty0, ty1, wy) = neighbours(&cy, y as f64);
        for x in 0..width {
            let (tx0, tx1, wx) = xw[x];
            let v = plane[y * width + x] as usize;
            let at = |tx: usize, ty: usize| f64::from(luts[ty * tiles + tx][v]);
            let top = (1.0 - wx) * at(tx0, ty0) + wx * at(tx1, ty0);
            let bottom = (1.0 - wx) * at(tx0, ty1) + wx * at(tx1, ty1);
            out[y * width + x] = ((1.0 - wy) * top + wy * bottom).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// Pair of tile indices bracketing `pos` and the weight of the second one.
pub(crate) fn neighbours(centers: &[f64], pos: f64) -> (usize, usize, f64) {
    let last = centers.len() - 1;
    if pos <= centers[0] {
        return (0, 0, 0.0);
    }
    if pos >= centers[last] {
        return (last, last, 0.0);
    }
    let i = centers.iter().rposition(|&c| c <= pos).unwrap_or(0).min(last - 1);
    let w = (pos - centers[i]) / (centers[i + 1] - centers[i]);
    (i, i + 1, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_preserves_total_count() {
        let mut h = [0u32; BINS];
        h[10] = 900;
        h[200] = 124;
        clip_histogram(&mut h, 8);
        assert_eq!(h.iter().sum::<u32>(), 1024);
        assert!(h.iter().all(|&v| v <= 8 + 1024 / 256 + 1));
    }

    #[test]
    fn grid_larger_than_image_rejected() {
        assert!(clahe(&[0; 16], 4, 4, 2.0, 8).is_err());
    }

    #[test]
    fn bracketing_weights() {
        let c = [1.5, 5.5, 9.5];
        assert_eq!(neighbours(&c, 0.0), (0, 0, 0.0));
        assert_eq!(neighbours(&c, 11.0), (2, 2, 0.0));
        let (a, b, w) = neighbours(&c, 3.5);
        assert_eq!((a, b), (0, 1));
        assert!((w - 0.5).abs() < 1e-12);
        let (a, b, w) = neighbours(&c, 5.5);
        assert_eq!((a, b, w), (1, 2, 0.0));
    }
}
