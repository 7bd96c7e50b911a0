//! Merging the artery and vein probability maps into one label map.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{LabelMap, VesselClass};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Pixels where both probabilities fall below this are background.
    pub vessel_threshold: f64,
    /// Largest relative difference, `|p_a - p_v| / max(p_a, p_v)`, that
    /// still counts as uncertain.
    pub uncertainty_band: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            vessel_threshold: 0.5,
            uncertainty_band: 0.2,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("vessel_threshold", self.vessel_threshold), ("uncertainty_band", self.uncertainty_band)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} {v} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Class of a single pixel.
pub fn fuse_pixel(p_artery: f64, p_vein: f64, cfg: &FusionConfig) -> VesselClass {
    let hi = p_artery.max(p_vein);
    if hi < cfg.vessel_threshold {
        VesselClass::Background
    } else if (p_artery - p_vein).abs() / hi <= cfg.uncertainty_band {
        VesselClass::Uncertain
    } else if p_artery > p_vein {
        VesselClass::Artery
    } else {
        VesselClass::Vein
    }
}

/// Fuses two row-major `width x height` probability rasters.
pub fn fuse(p_artery: &[f64], p_vein: &[f64], width: usize, height: usize, cfg: &FusionConfig) -> Result<LabelMap> {
    if p_artery.len() != width * height || p_vein.len() != width * height {
        return Err(Error::shape(
            "fuse",
            format!(
                "{width}x{height} needs {} values, got artery {} and vein {}",
                width * height,
                p_artery.len(),
                p_vein.len()
            ),
        ));
    }
    if let Some(i) = p_artery.iter().chain(p_vein).position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument(format!("probability element {i} is outside [0, 1]")));
    }
    let classes = p_artery
        .iter()
        .zip(p_vein)
        .map(|(&a, &v)| fuse_pixel(a, v, cfg))
        .collect();
    LabelMap::new(width, height, classes)
}

pub fn palette(class: VesselClass) -> [u8; 3] {
    match class {
        VesselClass::Background => [0, 0, 0],
        VesselClass::Artery => [255, 0, 0],
        VesselClass::Vein => [0, 0, 255],
        VesselClass::Uncertain => [0, 255, 0],
    }
}

pub fn encode_colors(label: &LabelMap) -> RgbImage {
    let (w, h) = label.dims();
    RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb(palette(label.get(x as usize, y as usize))))
}
