use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{LabelMap, Mask, VesselClass};
use crate::preprocess::FundusSample;

/// Procedural fundus-like images with exact artery/vein labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Side of the square image.
    pub size: usize,
    pub count: usize,
    pub trees_per_class: usize,
    /// Levels of bifurcation below each root segment.
    pub branch_depth: usize,
    pub min_width: f64,
    pub max_width: f64,
    /// Chance that a vein reaching an artery crosses it instead of ending.
    pub crossover_probability: f64,
    /// Standard deviation of per-channel pixel noise, in gray levels.
    pub noise_sigma: f64,
    /// How much brighter arteries are than veins, in gray levels.
    pub contrast_gap: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            count: 25,
            trees_per_class: 2,
            branch_depth: 3,
            min_width: 1.0,
            max_width: 6.0,
            crossover_probability: 0.5,
            noise_sigma: 4.0,
            contrast_gap: 40.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.size < 16 || self.size % 8 != 0 {
            return bad(format!("synthetic image side {} must be a multiple of 8, at least 16", self.size));
        }
        if self.trees_per_class == 0 {
            return bad("at least one vessel tree per class is required".into());
        }
        if !(self.min_width >= 1.0 && self.min_width <= self.max_width && self.max_width.is_finite()) {
            return bad(format!("width range {}..{} is invalid", self.min_width, self.max_width));
        }
        if !(0.0..=1.0).contains(&self.crossover_probability) {
            return bad(format!("crossover probability {} is outside [0, 1]", self.crossover_probability));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) || !self.contrast_gap.is_finite() {
            return bad("noise sigma must be >= 0 and the contrast gap finite".into());
        }
        Ok(())
    }
}

/// One generated image with the per-tree rasters behind its label.
#[derive(Clone, Debug)]
pub struct SynthImage {
    pub sample: FundusSample,
    pub artery: Mask,
    pub vein: Mask,
    pub trees: Vec<(VesselClass, Mask)>,
}

const STEP: f64 = 0.4;
const VEIN_RGB: [f64; 3] = [95.0, 32.0, 30.0];
const BACKGROUND_RGB: [f64; 3] = [205.0, 112.0, 58.0];

struct Canvas<'a> {
    size: usize,
    fov: &'a Mask,
}

impl Canvas<'_> {
    fn inside(&self, x: f64, y: f64) -> bool {
        let (xi, yi) = (x.round(), y.round());
        xi >= 0.0 && yi >= 0.0 && self.fov.get_signed(xi as isize, yi as isize)
    }

    /// Pixels covered by a disc of diameter `width` at `(x, y)`, always
    /// including the nearest pixel so that consecutive stamps touch.
    fn stamp(&self, x: f64, y: f64, width: f64, out: &mut Vec<(usize, usize)>) {
        out.clear();
        let r = width / 2.0;
        let (x0, x1) = ((x - r).floor() as isize, (x + r).ceil() as isize);
        let (y0, y1) = ((y - r).floor() as isize, (y + r).ceil() as isize);
        let (nx, ny) = (x.round() as isize, y.round() as isize);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let (dx, dy) = (px as f64 - x, py as f64 - y);
                let hit = dx * dx + dy * dy <= r * r || (px, py) == (nx, ny);
                if hit && self.fov.get_signed(px, py) {
                    out.push((px as usize, py as usize));
                }
            }
        }
    }
}

struct Branch {
    x: f64,
    y: f64,
    angle: f64,
    width: f64,
    length: f64,
    depth: usize,
}

/// Grows one tree. When `avoid` is given, touching it ends the branch
/// unless a crossing is drawn with the configured probability.
fn grow_tree(
    canvas: &Canvas<'_>,
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    root: Branch,
    avoid: Option<&Mask>,
) -> Mask {
    let mut tree = Mask::filled(canvas.size, canvas.size, false);
    let mut stack = vec![root];
    let mut cells = Vec::new();
    while let Some(b) = stack.pop() {
        let (mut x, mut y, mut angle) = (b.x, b.y, b.angle);
        let steps = (b.length / STEP).ceil() as usize;
        let mut crossing = false;
        let mut completed = true;
        for _ in 0..steps {
            if !canvas.inside(x, y) {
                completed = false;
                break;
            }
            canvas.stamp(x, y, b.width, &mut cells);
            if let Some(other) = avoid {
                let touches = cells.iter().any(|&(px, py)| other.get(px, py));
                if touches && !crossing {
                    if rng.random_bool(cfg.crossover_probability) {
                        crossing = true;
                    } else {
                        completed = false;
                        break;
                    }
                } else if !touches {
                    crossing = false;
                }
            }
            for &(px, py) in &cells {
                tree.set(px, py, true);
            }
            angle += rng.random_range(-0.06..0.06);
            x += STEP * angle.cos();
            y += STEP * angle.sin();
        }
        if completed && b.depth < cfg.branch_depth {
            let spread = rng.random_range(0.35..0.8);
            for side in [-1.0, 1.0] {
                let shrink = rng.random_range(0.6..0.8);
                stack.push(Branch {
                    x,
                    y,
                    angle: angle + side * spread,
                    width: (b.width * shrink).max(cfg.min_width),
                    length: b.length * rng.random_range(0.6..0.85),
                    depth: b.depth + 1,
                });
            }
        }
    }
    tree
}

fn union(a: &Mask, b: &Mask) -> Mask {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x || *y).collect();
    Mask::new(a.width(), a.height(), data).expect("same dims")
}

/// Generates image `index` of the corpus described by `cfg`.
pub fn synthesize(cfg: &SynthConfig, index: usize) -> Result<SynthImage> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let n = cfg.size;
    let s = n as f64;
    let centre = (s - 1.0) / 2.0;
    let radius = 0.48 * s;
    let mut fov = Mask::filled(n, n, false);
    for y in 0..n {
        for x in 0..n {
            let (dx, dy) = (x as f64 - centre, y as f64 - centre);
            fov.set(x, y, dx * dx + dy * dy <= radius * radius);
        }
    }
    let canvas = Canvas { size: n, fov: &fov };

    // optic disc somewhere left or right of centre; trees radiate from it
    let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
    let disc = (centre + side * rng.random_range(0.1..0.25) * s, centre + rng.random_range(-0.1..0.1) * s);
    let disc_r = 0.07 * s;

    let mut trees = Vec::new();
    let mut artery = Mask::filled(n, n, false);
    let mut vein = Mask::filled(n, n, false);
    for class in [VesselClass::Artery, VesselClass::Vein] {
        let total = cfg.trees_per_class;
        for t in 0..total {
            let base = std::f64::consts::TAU * (t as f64 + 0.5) / total as f64;
            let offset = if class == VesselClass::Vein { 0.5 * std::f64::consts::TAU / total as f64 } else { 0.0 };
            let angle = base + offset + rng.random_range(-0.25..0.25);
            let scale = if class == VesselClass::Artery { 0.85 } else { 1.0 };
            let root = Branch {
                x: disc.0 + disc_r * angle.cos(),
                y: disc.1 + disc_r * angle.sin(),
                angle,
                width: (cfg.max_width * scale * rng.random_range(0.75..1.0)).clamp(cfg.min_width, cfg.max_width),
                length: s * rng.random_range(0.18..0.28),
                depth: 0,
            };
            let avoid = (class == VesselClass::Vein).then_some(&artery);
            let tree = grow_tree(&canvas, &mut rng, cfg, root, avoid);
            match class {
                VesselClass::Artery => artery = union(&artery, &tree),
                _ => vein = union(&vein, &tree),
            }
            trees.push((class, tree));
        }
    }

    let classes = artery
        .data()
        .iter()
        .zip(vein.data())
        .map(|(&a, &v)| match (a, v) {
            (true, true) => VesselClass::Uncertain,
            (true, false) => VesselClass::Artery,
            (false, true) => VesselClass::Vein,
            (false, false) => VesselClass::Background,
        })
        .collect();
    let label = LabelMap::new(n, n, classes)?;

    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let artery_rgb = VEIN_RGB.map(|c| c + cfg.contrast_gap);
    let mut rgb = RgbImage::new(n as u32, n as u32);
    for y in 0..n {
        for x in 0..n {
            if !fov.get(x, y) {
                continue;
            }
            let (dx, dy) = (x as f64 - centre, y as f64 - centre);
            let vignette = 1.0 - 0.15 * (dx * dx + dy * dy) / (radius * radius);
            let (ddx, ddy) = (x as f64 - disc.0, y as f64 - disc.1);
            let glow = 45.0 * (-(ddx * ddx + ddy * ddy) / (2.0 * disc_r * disc_r)).exp();
            let base = match label.get(x, y) {
                VesselClass::Background => BACKGROUND_RGB.map(|c| c * vignette + glow),
                VesselClass::Artery => artery_rgb,
                VesselClass::Vein => VEIN_RGB,
                VesselClass::Uncertain => [0, 1, 2].map(|k| 0.5 * (artery_rgb[k] + VEIN_RGB[k])),
            };
            let mut px = [0u8; 3];
            for k in 0..3 {
                let jitter = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                px[k] = (base[k] + jitter).round().clamp(0.0, 255.0) as u8;
            }
            rgb.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    let sample = FundusSample::new(rgb, Some(fov), Some(label), format!("synth_{index:04}"))?;
    Ok(SynthImage {
        sample,
        artery,
        vein,
        trees,
    })
}

/// The whole corpus, `cfg.count` images.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<FundusSample>> {
    cfg.validate()?;
    if cfg.count == 0 {
        return Err(Error::InvalidArgument("synthetic corpus needs at least one image".into()));
    }
    (0..cfg.count).map(|i| synthesize(cfg, i).map(|s| s.sample)).collect()
}
