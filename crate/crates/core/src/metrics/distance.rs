use crate::error::{Error, Result};
use crate::label::Mask;

/// Lower envelope of the parabolas `(q - p)^2 + f[p]` sampled at every `q`
/// (Felzenszwalb & Huttenlocher). `f` must be finite.
fn envelope_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let sq = |p: usize| f[p] + (p * p) as f64;
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..f.len() {
        let mut s;
        loop {
            let p = v[k];
            s = (sq(q) - sq(p)) / (2.0 * (q - p) as f64);
            if s > z[k] {
                break;
            }
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance from every pixel to the nearest pixel outside the
/// mask; pixels beyond the raster border count as outside. Outside pixels
/// get 0.
pub fn distance_transform(mask: &Mask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let (pw, ph) = (w + 2, h + 2);
    let inside = |x: usize, y: usize| x > 0 && y > 0 && x <= w && y <= h && mask.get(x - 1, y - 1);
    let big = ((pw * pw + ph * ph) as f64) * 4.0;
    let mut grid: Vec<f64> = (0..pw * ph)
        .map(|i| if inside(i % pw, i / pw) { big } else { 0.0 })
        .collect();
    let len = pw.max(ph);
    let (mut f, mut out) = (vec![0.0; len], vec![0.0; len]);
    let (mut v, mut z) = (vec![0usize; len], vec![0.0; len + 1]);
    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        envelope_1d(&f[..ph], &mut out[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = out[y];
        }
    }
    for y in 0..ph {
        let row = &mut grid[y * pw..(y + 1) * pw];
        f[..pw].copy_from_slice(row);
        envelope_1d(&f[..pw], &mut out[..pw], &mut v, &mut z);
        row.copy_from_slice(&out[..pw]);
    }
    let mut dist = Vec::with_capacity(w * h);
    for y in 1..=h {
        for x in 1..=w {
            dist.push(grid[y * pw + x].sqrt());
        }
    }
    dist
}

/// Width estimate `2 * distance` at every centerline pixel, row-major;
/// `None` off the centerline.
pub fn vessel_width(mask: &Mask, centerline: &Mask) -> Result<Vec<Option<f64>>> {
    if mask.dims() != centerline.dims() {
        return Err(Error::shape(
            "vessel_width",
            format!("mask {:?} vs centerline {:?}", mask.dims(), centerline.dims()),
        ));
    }
    let w = mask.width();
    if let Some(i) = centerline.data().iter().zip(mask.data()).position(|(&c, &m)| c && !m) {
        return Err(Error::InvalidArgument(format!(
            "centerline pixel ({}, {}) lies outside the vessel mask",
            i % w,
            i / w
        )));
    }
    let dist = distance_transform(mask);
    Ok(centerline
        .data()
        .iter()
        .zip(dist)
        .map(|(&c, d)| c.then_some(2.0 * d))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(mask: &Mask) -> Vec<f64> {
        let (w, h) = (mask.width() as isize, mask.height() as isize);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !mask.get_signed(x, y) {
                    out.push(0.0);
                    continue;
                }
                let mut best = f64::INFINITY;
                for by in -1..=h {
                    for bx in -1..=w {
                        if !mask.get_signed(bx, by) {
                            let d = (((bx - x).pow(2) + (by - y).pow(2)) as f64).sqrt();
                            best = best.min(d);
                        }
                    }
                }
                out.push(best);
            }
        }
        out
    }

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        let mut m = Mask::filled(w, h, false);
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn thin_line_is_narrow() {
        let m = rect(10, 5, 1, 2, 9, 3);
        let widths = vessel_width(&m, &m).unwrap();
        assert!(widths.iter().flatten().all(|&w| w <= 2.0));
    }

    #[test]
    fn five_wide_bar() {
        let m = rect(20, 9, 2, 2, 18, 7);
        let mut c = Mask::filled(20, 9, false);
        for x in 5..15 {
            c.set(x, 4, true);
        }
        let widths = vessel_width(&m, &c).unwrap();
        for w in widths.iter().flatten() {
            assert!((w - 6.0).abs() < 1e-12 && *w > 2.0);
        }
    }

    #[test]
    fn disk_centre() {
        let mut m = Mask::filled(15, 15, false);
        for y in 0..15i32 {
            for x in 0..15i32 {
                if (x - 7).pow(2) + (y - 7).pow(2) <= 16 {
                    m.set(x as usize, y as usize, true);
                }
            }
        }
        let d = distance_transform(&m);
        let width = 2.0 * d[7 * 15 + 7];
        assert!((width - 8.0).abs() <= 0.5, "{width}");
    }

    #[test]
    fn centerline_outside_mask_rejected() {
        let m = rect(4, 4, 0, 0, 2, 2);
        let c = rect(4, 4, 3, 3, 4, 4);
        assert!(vessel_width(&m, &c).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force(bits in proptest::collection::vec(any::<bool>(), 13 * 11)) {
            let m = Mask::new(13, 11, bits).unwrap();
            let fast = distance_transform(&m);
            for (a, b) in fast.iter().zip(brute_force(&m)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn dense_masks_match_brute_force(w in 1usize..20, h in 1usize..20, holes in proptest::collection::vec((0usize..20, 0usize..20), 0..4)) {
            let mut m = Mask::filled(w, h, true);
            for (x, y) in holes {
                if x < w && y < h {
                    m.set(x, y, false);
                }
            }
            for (a, b) in distance_transform(&m).iter().zip(brute_force(&m)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
