//! Per-pixel class rasters and binary masks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum VesselClass {
    Background = 0,
    Artery = 1,
    Vein = 2,
    Uncertain = 3,
}

impl VesselClass {
    pub const ALL: [VesselClass; 4] = [
        VesselClass::Background,
        VesselClass::Artery,
        VesselClass::Vein,
        VesselClass::Uncertain,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(Error::ClassCode(code))
    }

    pub fn is_vessel(self) -> bool {
        self != VesselClass::Background
    }

    pub fn name(self) -> &'static str {
        match self {
            VesselClass::Background => "background",
            VesselClass::Artery => "artery",
            VesselClass::Vein => "vein",
            VesselClass::Uncertain => "uncertain",
        }
    }
}

impl fmt::Display for VesselClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which binary model is being trained or applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VesselKind {
    Artery,
    Vein,
}

impl VesselKind {
    pub fn class(self) -> VesselClass {
        match self {
            VesselKind::Artery => VesselClass::Artery,
            VesselKind::Vein => VesselClass::Vein,
        }
    }

    pub fn name(self) -> &'static str {
        self.class().name()
    }
}

impl fmt::Display for VesselKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VesselKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "artery" => Ok(VesselKind::Artery),
            "vein" => Ok(VesselKind::Vein),
            other => Err(Error::InvalidArgument(format!(
                "vessel kind must be `artery` or `vein`, got `{other}`"
            ))),
        }
    }
}

/// Row-major `width x height` raster of [`VesselClass`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    classes: Vec<VesselClass>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, classes: Vec<VesselClass>) -> Result<Self> {
        if classes.len() != width * height {
            return Err(Error::shape(
                "label_map",
                format!("{width}x{height} needs {} pixels, got {}", width * height, classes.len()),
            ));
        }
        Ok(Self { width, height, classes })
    }

    pub fn filled(width: usize, height: usize, class: VesselClass) -> Self {
        Self {
            width,
            height,
            classes: vec![class; width * height],
        }
    }

    pub fn from_codes(width: usize, height: usize, codes: &[u8]) -> Result<Self> {
        let classes = codes
            .iter()
            .map(|&c| VesselClass::from_code(c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(width, height, classes)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn classes(&self) -> &[VesselClass] {
        &self.classes
    }

    pub fn get(&self, x: usize, y: usize) -> VesselClass {
        self.classes[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: VesselClass) {
        self.classes[y * self.width + x] = class;
    }

    /// Pixel count per class, indexed by class code.
    pub fn histogram(&self) -> [usize; 4] {
        let mut h = [0; 4];
        for c in &self.classes {
            h[*c as usize] += 1;
        }
        h
    }

    /// Pixels of any vessel class.
    pub fn vessel_mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.classes.iter().map(|c| c.is_vessel()).collect(),
        }
    }

    pub fn class_mask(&self, class: VesselClass) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.classes.iter().map(|&c| c == class).collect(),
        }
    }

    /// Exchanges artery and vein labels.
    pub fn swap_artery_vein(&self) -> LabelMap {
        let classes = self
            .classes
            .iter()
            .map(|c| match c {
                VesselClass::Artery => VesselClass::Vein,
                VesselClass::Vein => VesselClass::Artery,
                other => *other,
            })
            .collect();
        LabelMap { classes, ..*self }
    }
}

/// Row-major binary raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "mask",
                format!("{width}x{height} needs {} pixels, got {}", width * height, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-range coordinates read as `false`.
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
            ..*self
        }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_codes_round_trip() {
        for c in VesselClass::ALL {
            assert_eq!(VesselClass::from_code(c.code()).unwrap(), c);
        }
        assert!(matches!(VesselClass::from_code(4), Err(Error::ClassCode(4))));
    }

    #[test]
    fn vessel_kind_parses() {
        assert_eq!("artery".parse::<VesselKind>().unwrap(), VesselKind::Artery);
        assert_eq!("Vein".parse::<VesselKind>().unwrap(), VesselKind::Vein);
        assert!("capillary".parse::<VesselKind>().is_err());
    }

    #[test]
    fn swap_exchanges_only_artery_and_vein() {
        let l = LabelMap::from_codes(4, 1, &[0, 1, 2, 3]).unwrap();
        assert_eq!(l.swap_artery_vein().classes(), LabelMap::from_codes(4, 1, &[0, 2, 1, 3]).unwrap().classes());
    }
}
