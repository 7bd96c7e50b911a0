//! Per-class accuracy and F1 over three nested pixel regions: the whole
//! field of view, vessel centerlines, and centerlines of wide vessels.

mod distance;
mod report;
mod skeleton;

pub use distance::{distance_transform, vessel_width};
pub use report::{MetricsReport, Summary, SummaryRow};
pub use skeleton::skeletonize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{LabelMap, Mask, VesselClass};

/// Centerline pixels with width strictly above this form the wide tier.
pub const WIDE_VESSEL_WIDTH: f64 = 2.0;

/// Classes averaged into the macro scores.
pub const MACRO_CLASSES: [VesselClass; 2] = [VesselClass::Artery, VesselClass::Vein];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `(accuracy, f1)`; F1 of a class absent from both maps is 1.
    pub fn accuracy_f1(&self) -> (f64, f64) {
        let total = self.total();
        let acc = if total == 0 { 1.0 } else { (self.tp + self.tn) as f64 / total as f64 };
        let denom = 2 * self.tp + self.fp + self.fn_;
        let f1 = if denom == 0 { 1.0 } else { (2 * self.tp) as f64 / denom as f64 };
        (acc, f1)
    }
}

/// One-vs-rest counts for each class over a region, indexed by class code.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub classes: [ClassCounts; 4],
    pub region_pixels: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, pred: VesselClass, truth: VesselClass) {
        self.region_pixels += 1;
        for c in VesselClass::ALL {
            let k = &mut self.classes[c as usize];
            match (pred == c, truth == c) {
                (true, true) => k.tp += 1,
                (true, false) => k.fp += 1,
                (false, true) => k.fn_ += 1,
                (false, false) => k.tn += 1,
            }
        }
    }

    pub fn get(&self, class: VesselClass) -> ClassCounts {
        self.classes[class as usize]
    }
}

/// Scores of one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierScores {
    pub counts: ConfusionCounts,
    /// `(accuracy, f1)` indexed by class code.
    pub per_class: [(f64, f64); 4],
    pub macro_accuracy: f64,
    pub macro_f1: f64,
}

impl TierScores {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let per_class = counts.classes.map(|c| c.accuracy_f1());
        let n = MACRO_CLASSES.len() as f64;
        let macro_accuracy = MACRO_CLASSES.iter().map(|&c| per_class[c as usize].0).sum::<f64>() / n;
        let macro_f1 = MACRO_CLASSES.iter().map(|&c| per_class[c as usize].1).sum::<f64>() / n;
        Self {
            counts,
            per_class,
            macro_accuracy,
            macro_f1,
        }
    }

    pub fn f1(&self, class: VesselClass) -> f64 {
        self.per_class[class as usize].1
    }

    pub fn accuracy(&self, class: VesselClass) -> f64 {
        self.per_class[class as usize].0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    AllVessel,
    Centerline,
    CenterlineWide,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::AllVessel, Tier::Centerline, Tier::CenterlineWide];

    pub fn name(self) -> &'static str {
        match self {
            Tier::AllVessel => "all_vessel",
            Tier::Centerline => "centerline",
            Tier::CenterlineWide => "centerline_wide",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TieredMetrics {
    /// Indexed like [`Tier::ALL`].
    pub tiers: [TierScores; 3],
}

impl TieredMetrics {
    pub fn tier(&self, t: Tier) -> &TierScores {
        &self.tiers[t as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Count only ground-truth centerline pixels that the prediction marks
    /// as some vessel class.
    pub restrict_centerline_to_detected: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            restrict_centerline_to_detected: true,
        }
    }
}

/// The three evaluation regions of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct TierRegions {
    pub all: Mask,
    pub centerline: Mask,
    pub wide: Mask,
}

impl TierRegions {
    pub fn get(&self, t: Tier) -> &Mask {
        match t {
            Tier::AllVessel => &self.all,
            Tier::Centerline => &self.centerline,
            Tier::CenterlineWide => &self.wide,
        }
    }
}

fn check_dims(pred: &LabelMap, truth: &LabelMap, fov: Option<&Mask>) -> Result<()> {
    if pred.dims() != truth.dims() || fov.is_some_and(|m| m.dims() != truth.dims()) {
        return Err(Error::shape(
            "evaluate",
            format!(
                "prediction {:?}, truth {:?}, fov {:?}",
                pred.dims(),
                truth.dims(),
                fov.map(Mask::dims)
            ),
        ));
    }
    Ok(())
}

/// Region 1: FOV plus every ground-truth vessel pixel. Region 2: skeleton
/// of the ground-truth vessel mask. Region 3: region-2 pixels whose
/// ground-truth width exceeds [`WIDE_VESSEL_WIDTH`].
pub fn tier_regions(pred: &LabelMap, truth: &LabelMap, fov: Option<&Mask>, opts: &EvalOptions) -> Result<TierRegions> {
    check_dims(pred, truth, fov)?;
    let (w, h) = truth.dims();
    let vessels = truth.vessel_mask();
    let all = match fov {
        Some(f) => Mask::new(w, h, f.data().iter().zip(vessels.data()).map(|(a, b)| *a || *b).collect())?,
        None => Mask::filled(w, h, true),
    };
    let mut centerline = skeletonize(&vessels);
    let widths = vessel_width(&vessels, &centerline)?;
    if opts.restrict_centerline_to_detected {
        centerline = centerline.and(&pred.vessel_mask());
    }
    let wide = Mask::new(
        w,
        h,
        widths
            .iter()
            .zip(centerline.data())
            .map(|(wd, &c)| c && wd.is_some_and(|v| v > WIDE_VESSEL_WIDTH))
            .collect(),
    )?;
    Ok(TierRegions { all, centerline, wide })
}

pub fn count_region(pred: &LabelMap, truth: &LabelMap, region: &Mask) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for ((p, t), &inside) in pred.classes().iter().zip(truth.classes()).zip(region.data()) {
        if inside {
            c.add(*p, *t);
        }
    }
    c
}

pub fn evaluate(pred: &LabelMap, truth: &LabelMap, fov: Option<&Mask>, opts: &EvalOptions) -> Result<TieredMetrics> {
    let regions = tier_regions(pred, truth, fov, opts)?;
    Ok(TieredMetrics {
        tiers: Tier::ALL.map(|t| TierScores::from_counts(count_region(pred, truth, regions.get(t)))),
    })
}
