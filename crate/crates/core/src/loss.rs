//! Binary focal loss with per-pixel class weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{LabelMap, Mask, VesselClass, VesselKind};
use crate::tensor::{Graph, Tensor, Var};

/// Probabilities are clamped to `[P_MIN, 1 - P_MIN]` before the log.
pub const P_MIN: f64 = 1e-7;
/// How far outside `[0, 1]` a prediction may stray before it is rejected.
const RANGE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalConfig {
    pub gamma: f64,
    /// Weight of foreground pixels of the trained vessel kind. Background
    /// pixels get `1 - alpha_fg`.
    pub alpha_fg: f64,
    /// Weight of pixels labeled uncertain, which count as foreground.
    pub alpha_uncertain: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha_fg: 0.8,
            alpha_uncertain: 0.9,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("focal gamma {} must be >= 0", self.gamma)));
        }
        for (name, a) in [("alpha_fg", self.alpha_fg), ("alpha_uncertain", self.alpha_uncertain)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidArgument(format!("{name} {a} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Loss of one pixel and its derivative with respect to the prediction.
///
/// `alpha` is the foreground weight at the pixel; a background pixel is
/// weighted by `1 - alpha`.
pub fn pixel_focal(pred: f64, target: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let (raw, a_t, sign) = if target { (pred, alpha, 1.0) } else { (1.0 - pred, 1.0 - alpha, -1.0) };
    let p_t = raw.clamp(P_MIN, 1.0 - P_MIN);
    let q = 1.0 - p_t;
    let ln = p_t.ln();
    let loss = -a_t * q.powf(gamma) * ln;
    let d_pt = if raw != p_t {
        0.0
    } else {
        let focus = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * ln };
        a_t * (focus - q.powf(gamma) / p_t)
    };
    (loss, sign * d_pt)
}

/// Binary target, weight and region rasters for one batch, each shaped
/// `[N, 1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FocalTargets {
    pub target: Tensor,
    pub weights: Tensor,
    /// 1 inside the averaging region, 0 outside.
    pub region: Tensor,
}

impl FocalTargets {
    pub fn new(target: Tensor, weights: Tensor, region: Tensor) -> Result<Self> {
        target.dims4("focal_targets")?;
        if weights.shape() != target.shape() || region.shape() != target.shape() {
            return Err(Error::shape(
                "focal_targets",
                format!("target {:?}, weights {:?}, region {:?}", target.shape(), weights.shape(), region.shape()),
            ));
        }
        if let Some(i) = target.data().iter().position(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::InvalidArgument(format!("target element {i} is not binary")));
        }
        Ok(Self { target, weights, region })
    }

    /// Targets for one image; `fov` limits the averaging region.
    pub fn from_label(label: &LabelMap, fov: Option<&Mask>, kind: VesselKind, cfg: &FocalConfig) -> Result<Self> {
        let (w, h) = label.dims();
        let raster = build_weight_raster(label, kind, cfg);
        let region = match fov {
            Some(m) if m.dims() != (w, h) => {
                return Err(Error::shape("focal_targets", format!("FOV {:?} vs label {w}x{h}", m.dims())))
            }
            Some(m) => m.data().iter().map(|&b| f64::from(u8::from(b))).collect(),
            None => vec![1.0; w * h],
        };
        let shape = vec![1, 1, h, w];
        Self::new(
            Tensor::new(shape.clone(), raster.target)?,
            Tensor::new(shape.clone(), raster.alpha)?,
            Tensor::new(shape, region)?,
        )
    }

    pub fn stack(items: &[&FocalTargets]) -> Result<Self> {
        let pick = |f: fn(&FocalTargets) -> &Tensor| Tensor::stack(&items.iter().map(|t| f(t)).collect::<Vec<_>>());
        Self::new(pick(|t| &t.target)?, pick(|t| &t.weights)?, pick(|t| &t.region)?)
    }

    /// Nearest-neighbour subsampling by `factor`, for auxiliary heads.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        Ok(Self {
            target: downsample_nearest(&self.target, factor)?,
            weights: downsample_nearest(&self.weights, factor)?,
            region: downsample_nearest(&self.region, factor)?,
        })
    }
}

/// Picks the pixel at offset `factor / 2` inside each `factor x factor` cell.
pub fn downsample_nearest(t: &Tensor, factor: usize) -> Result<Tensor> {
    let [n, c, h, w] = t.dims4("downsample_nearest")?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::shape("downsample_nearest", format!("{h}x{w} by factor {factor}")));
    }
    let (oh, ow, off) = (h / factor, w / factor, factor / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in t.data().chunks(h * w) {
        for y in 0..oh {
            for x in 0..ow {
                out.push(plane[(y * factor + off) * w + x * factor + off]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Binary target and foreground weight for one vessel kind.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightRaster {
    pub width: usize,
    pub height: usize,
    pub target: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl WeightRaster {
    pub fn positives(&self) -> usize {
        self.target.iter().filter(|&&t| t == 1.0).count()
    }
}

/// Pixels of `kind` and uncertain pixels are positives. Every pixel but an
/// uncertain one carries `alpha_fg`, which the loss turns into
/// `1 - alpha_fg` on negatives.
pub fn build_weight_raster(label: &LabelMap, kind: VesselKind, cfg: &FocalConfig) -> WeightRaster {
    let fg = kind.class();
    let (target, alpha) = label
        .classes()
        .iter()
        .map(|&c| match c {
            VesselClass::Uncertain => (1.0, cfg.alpha_uncertain),
            c if c == fg => (1.0, cfg.alpha_fg),
            _ => (0.0, cfg.alpha_fg),
        })
        .unzip();
    WeightRaster {
        width: label.width(),
        height: label.height(),
        target,
        alpha,
    }
}

/// Mean focal loss over the region pixels, and the gradient per prediction.
pub fn focal_value(pred: &Tensor, targets: &FocalTargets, gamma: f64) -> Result<(f64, Vec<f64>)> {
    if pred.shape() != targets.target.shape() {
        return Err(Error::shape(
            "focal_loss",
            format!("prediction {:?} vs target {:?}", pred.shape(), targets.target.shape()),
        ));
    }
    let count = targets.region.data().iter().filter(|&&r| r != 0.0).count();
    if count == 0 {
        return Err(Error::InvalidArgument("focal loss region is empty".into()));
    }
    let norm = 1.0 / count as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; pred.numel()];
    for (i, &p) in pred.data().iter().enumerate() {
        if !(p >= -RANGE_TOLERANCE && p <= 1.0 + RANGE_TOLERANCE) {
            return Err(Error::Numeric(format!("prediction {p} at element {i} is outside [0, 1]")));
        }
        if targets.region.data()[i] == 0.0 {
            continue;
        }
        let (l, d) = pixel_focal(p, targets.target.data()[i] == 1.0, targets.weights.data()[i], gamma);
        total += l;
        grad[i] = d * norm;
    }
    Ok((total * norm, grad))
}

impl Graph {
    /// Focal loss of probabilities `pred` as a differentiable scalar.
    pub fn focal_loss(&mut self, pred: Var, targets: &FocalTargets, cfg: &FocalConfig) -> Result<Var> {
        let (value, grad) = focal_value(self.value(pred), targets, cfg.gamma)?;
        Ok(self.custom(&[pred], Tensor::scalar(value), move |go| {
            vec![grad.iter().map(|g| g * go[0]).collect()]
        }))
    }
}
