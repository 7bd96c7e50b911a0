use std::path::Path;

use image::{ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::fuse::{encode_colors, palette};
use crate::label::{LabelMap, Mask, VesselClass};

/// Largest per-channel deviation from a palette color that still decodes.
pub const PALETTE_TOLERANCE: u8 = 64;

/// Nearest-palette decoding of a color-coded ground truth.
pub fn decode_av_label(rgb: &RgbImage) -> Result<LabelMap> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut classes = Vec::with_capacity(w * h);
    for (x, y, p) in rgb.enumerate_pixels() {
        let (class, dist) = VesselClass::ALL
            .iter()
            .map(|&c| {
                let q = palette(c);
                let d = (0..3).map(|k| p.0[k].abs_diff(q[k])).max().unwrap_or(0);
                (c, d)
            })
            .min_by_key(|&(_, d)| d)
            .expect("palette is non-empty");
        if dist > PALETTE_TOLERANCE {
            return Err(Error::LabelColor { x, y, rgb: p.0 });
        }
        classes.push(class);
    }
    LabelMap::new(w, h, classes)
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    }
}

/// Reads any supported raster (PNG, PPM) as 8-bit RGB.
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_rgb8())
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn read_label(path: &Path) -> Result<LabelMap> {
    decode_av_label(&read_rgb(path)?).map_err(|e| match e {
        Error::LabelColor { x, y, rgb } => Error::Dataset(format!(
            "{}: unmappable label color {rgb:?} at (x={x}, y={y})",
            path.display()
        )),
        e => e,
    })
}

pub fn write_label(path: &Path, label: &LabelMap) -> Result<()> {
    write_rgb(path, &encode_colors(label))
}

/// Pixels brighter than mid-gray are inside the mask.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Mask::new(w, h, img.pixels().map(|p| p.0[0] > 127).collect())
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let (w, h) = mask.dims();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect())
            .expect("buffer sized to mask");
    img.save(path).map_err(|e| image_err(path, e))
}

/// 16-bit grayscale, `value / 65535` = probability.
pub fn write_probability(path: &Path, probs: &[f64], width: usize, height: usize) -> Result<()> {
    if probs.len() != width * height {
        return Err(Error::shape("write_probability", format!("{width}x{height} vs {} values", probs.len())));
    }
    let data = probs.iter().map(|p| (p.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, data).expect("buffer sized to raster");
    img.save(path).map_err(|e| image_err(path, e))
}

/// Returns `(probabilities, width, height)`.
pub fn read_probability(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((img.pixels().map(|p| f64::from(p.0[0]) / 65535.0).collect(), w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(rgb: [u8; 3]) -> Result<VesselClass> {
        decode_av_label(&RgbImage::from_pixel(1, 1, Rgb(rgb))).map(|l| l.get(0, 0))
    }

    #[test]
    fn palette_colors() {
        assert_eq!(one([255, 0, 0]).unwrap(), VesselClass::Artery);
        assert_eq!(one([0, 0, 0]).unwrap(), VesselClass::Background);
        assert_eq!(one([0, 0, 255]).unwrap(), VesselClass::Vein);
        assert_eq!(one([0, 255, 0]).unwrap(), VesselClass::Uncertain);
        assert_eq!(one([250, 5, 5]).unwrap(), VesselClass::Artery);
    }

    #[test]
    fn far_colors_report_position() {
        let mut img = RgbImage::new(3, 2);
        img.put_pixel(2, 1, Rgb([128, 128, 128]));
        match decode_av_label(&img) {
            Err(Error::LabelColor { x: 2, y: 1, rgb }) => assert_eq!(rgb, [128, 128, 128]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let codes: Vec<u8> = (0..35).map(|_| rng.random_range(0..4)).collect();
        let label = LabelMap::from_codes(7, 5, &codes).unwrap();
        let p = dir.path().join("l.png");
        write_label(&p, &label).unwrap();
        assert_eq!(read_label(&p).unwrap(), label);

        let mask = Mask::new(7, 5, codes.iter().map(|&c| c > 1).collect()).unwrap();
        let p = dir.path().join("m.png");
        write_mask(&p, &mask).unwrap();
        assert_eq!(read_mask(&p).unwrap(), mask);

        let probs: Vec<f64> = (0..35).map(|_| rng.random()).collect();
        let p = dir.path().join("p.png");
        write_probability(&p, &probs, 7, 5).unwrap();
        let (back, w, h) = read_probability(&p).unwrap();
        assert_eq!((w, h), (7, 5));
        for (a, b) in back.iter().zip(&probs) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }

        let rgb = RgbImage::from_fn(4, 3, |x, y| Rgb([x as u8 * 50, y as u8 * 70, 9]));
        let p = dir.path().join("i.ppm");
        write_rgb(&p, &rgb).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), rgb);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_rgb(Path::new("/nonexistent/x.png")), Err(Error::Io { .. })));
    }
}
