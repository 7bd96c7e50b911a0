//! Bilinear resampling for intensities, nearest-neighbour for class rasters.

use image::RgbImage;

use crate::label::{LabelMap, Mask};

/// Source coordinate of destination pixel `d` under half-pixel-center
/// alignment, clamped to the valid range.
fn source_coord(d: usize, src_len: usize, dst_len: usize) -> f64 {
    let s = (d as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    s.clamp(0.0, (src_len - 1) as f64)
}

fn nearest_index(d: usize, src_len: usize, dst_len: usize) -> usize {
    (((d as f64 + 0.5) * src_len as f64 / dst_len as f64) as usize).min(src_len - 1)
}

/// Bilinear resize of one row-major `f64` plane.
pub fn resize_plane(plane: &[f64], width: usize, height: usize, new_w: usize, new_h: usize) -> Vec<f64> {
    if (width, height) == (new_w, new_h) {
        return plane.to_vec();
    }
    let xs: Vec<(usize, usize, f64)> = (0..new_w)
        .map(|x| {
            let s = source_coord(x, width, new_w);
            let x0 = s.floor() as usize;
            (x0, (x0 + 1).min(width - 1), s - x0 as f64)
        })
        .collect();
    let mut out = Vec::with_capacity(new_w * new_h);
    for y in 0..new_h {
        let s = source_coord(y, height, new_h);
        let y0 = s.floor() as usize;
        let y1 = (y0 + 1).min(height - 1);
        let wy = s - y0 as f64;
        let (r0, r1) = (&plane[y0 * width..(y0 + 1) * width], &plane[y1 * width..(y1 + 1) * width]);
        for &(x0, x1, wx) in &xs {
            let top = r0[x0] + wx * (r0[x1] - r0[x0]);
            let bottom = r1[x0] + wx * (r1[x1] - r1[x0]);
            out.push(top + wy * (bottom - top));
        }
    }
    out
}

/// Bilinear resize of an RGB image; values are rounded back to 8 bits.
pub fn resize_rgb(image: &RgbImage, new_w: usize, new_h: usize) -> RgbImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if (w, h) == (new_w, new_h) {
        return image.clone();
    }
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let plane: Vec<f64> = image.pixels().map(|p| f64::from(p.0[c])).collect();
            resize_plane(&plane, w, h, new_w, new_h)
        })
        .collect();
    let mut buf = Vec::with_capacity(new_w * new_h * 3);
    for i in 0..new_w * new_h {
        for plane in &planes {
            buf.push(plane[i].round().clamp(0.0, 255.0) as u8);
        }
    }
    RgbImage::from_raw(new_w as u32, new_h as u32, buf).expect("buffer sized for image")
}

fn nearest<T: Copy>(data: &[T], width: usize, height: usize, new_w: usize, new_h: usize) -> Vec<T> {
    let xs: Vec<usize> = (0..new_w).map(|x| nearest_index(x, width, new_w)).collect();
    (0..new_h)
        .flat_map(|y| {
            let sy = nearest_index(y, height, new_h);
            xs.iter().map(move |&sx| data[sy * width + sx])
        })
        .collect()
}

/// Nearest-neighbour resize; class labels never blend.
pub fn resize_labels(label: &LabelMap, new_w: usize, new_h: usize) -> LabelMap {
    let (w, h) = label.dims();
    LabelMap::new(new_w, new_h, nearest(label.classes(), w, h, new_w, new_h)).expect("sized")
}

pub fn resize_mask(mask: &Mask, new_w: usize, new_h: usize) -> Mask {
    let (w, h) = mask.dims();
    Mask::new(new_w, new_h, nearest(mask.data(), w, h, new_w, new_h)).expect("sized")
}
