//! Fundus image preparation: resize, green-channel CLAHE, z-score.

mod clahe;
mod resize;

pub use clahe::clahe;
pub use resize::{resize_labels, resize_mask, resize_plane, resize_rgb};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{LabelMap, Mask};
use crate::tensor::Tensor;

/// One fundus photograph with its optional field-of-view mask and labels.
#[derive(Clone, Debug)]
pub struct FundusSample {
    pub rgb: RgbImage,
    pub fov_mask: Option<Mask>,
    pub label: Option<LabelMap>,
    pub source_id: String,
}

impl FundusSample {
    pub fn new(
        rgb: RgbImage,
        fov_mask: Option<Mask>,
        label: Option<LabelMap>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let dims = (rgb.width() as usize, rgb.height() as usize);
        let source_id = source_id.into();
        if let Some(m) = &fov_mask {
            if m.dims() != dims {
                return Err(Error::shape(
                    "fundus_sample",
                    format!("{source_id}: mask {:?} vs image {dims:?}", m.dims()),
                ));
            }
        }
        if let Some(l) = &label {
            if l.dims() != dims {
                return Err(Error::shape(
                    "fundus_sample",
                    format!("{source_id}: label {:?} vs image {dims:?}", l.dims()),
                ));
            }
        }
        Ok(Self {
            rgb,
            fov_mask,
            label,
            source_id,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rgb.width() as usize, self.rgb.height() as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Side of the square network input.
    pub target_size: usize,
    /// Clip limit relative to the mean histogram bin height.
    pub clahe_clip_limit: f64,
    /// Tile grid count per side.
    pub clahe_tiles: usize,
    pub epsilon: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_size: 64,
            clahe_clip_limit: 2.0,
            clahe_tiles: 8,
            epsilon: 1e-8,
        }
    }
}

impl PreprocessConfig {
    pub const DRIVE_SIZE: usize = 512;
    pub const HRF_SIZE: usize = 1024;

    pub fn validate(&self, levels: usize) -> Result<()> {
        let div = 1usize << levels.saturating_sub(1);
        if self.target_size == 0 || self.target_size % div != 0 {
            return Err(Error::InvalidArgument(format!(
                "target size {} must be a positive multiple of {div}",
                self.target_size
            )));
        }
        if self.clahe_tiles == 0 || self.clahe_tiles > self.target_size {
            return Err(Error::InvalidArgument(format!(
                "CLAHE tile grid {} does not fit target size {}",
                self.clahe_tiles, self.target_size
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Replaces the green channel with its CLAHE-equalized version; red and
/// blue are copied unchanged.
pub fn clahe_green(rgb: &RgbImage, cfg: &PreprocessConfig) -> Result<RgbImage> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let green: Vec<u8> = rgb.pixels().map(|p| p.0[1]).collect();
    let eq = clahe(&green, w, h, cfg.clahe_clip_limit, cfg.clahe_tiles)?;
    let mut out = rgb.clone();
    for (p, g) in out.pixels_mut().zip(eq) {
        p.0[1] = g;
    }
    Ok(out)
}

/// Per-channel standardization into a `[1, 3, H, W]` tensor. Statistics
/// come from pixels inside `mask` when given, the whole image otherwise.
pub fn zscore(rgb: &RgbImage, mask: Option<&Mask>, epsilon: f64) -> Result<Tensor> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if let Some(m) = mask {
        if m.dims() != (w, h) {
            return Err(Error::shape("zscore", format!("mask {:?} vs image {w}x{h}", m.dims())));
        }
    }
    let inside = |i: usize| mask.is_none_or(|m| m.data()[i]);
    let mut data = Vec::with_capacity(3 * w * h);
    for c in 0..3 {
        let plane: Vec<f64> = rgb.pixels().map(|p| f64::from(p.0[c])).collect();
        let (mut n, mut sum) = (0usize, 0.0);
        for (i, v) in plane.iter().enumerate() {
            if inside(i) {
                n += 1;
                sum += v;
            }
        }
        let (mean, std) = if n == 0 {
            (0.0, 0.0)
        } else {
            let mean = sum / n as f64;
            let var = plane
                .iter()
                .enumerate()
                .filter(|(i, _)| inside(*i))
                .map(|(_, v)| (v - mean) * (v - mean))
                .sum::<f64>()
                / n as f64;
            (mean, var.sqrt())
        };
        data.extend(plane.iter().map(|v| (v - mean) / (std + epsilon)));
    }
    Tensor::new(vec![1, 3, h, w], data)
}

/// Network-ready view of a sample at `target_size x target_size`.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub input: Tensor,
    pub label: Option<LabelMap>,
    pub fov_mask: Option<Mask>,
    pub source_id: String,
    /// Size of the original photograph, `(width, height)`.
    pub native_dims: (usize, usize),
}

/// resize -> CLAHE(green) -> z-score.
pub fn preprocess(sample: &FundusSample, cfg: &PreprocessConfig) -> Result<PreparedSample> {
    let s = cfg.target_size;
    if s == 0 {
        return Err(Error::InvalidArgument("target size must be positive".into()));
    }
    let resized = resize_rgb(&sample.rgb, s, s);
    let enhanced = clahe_green(&resized, cfg)?;
    let fov_mask = sample.fov_mask.as_ref().map(|m| resize_mask(m, s, s));
    let input = zscore(&enhanced, fov_mask.as_ref(), cfg.epsilon)?;
    Ok(PreparedSample {
        input,
        label: sample.label.as_ref().map(|l| resize_labels(l, s, s)),
        fov_mask,
        source_id: sample.source_id.clone(),
        native_dims: sample.dims(),
    })
}
