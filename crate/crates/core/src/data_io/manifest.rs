use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::codec::{read_label, read_mask, read_rgb};
use crate::error::{Error, Result};
use crate::preprocess::FundusSample;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGE_DIR: &str = "images";
pub const LABEL_DIR: &str = "av";
pub const MASK_DIR: &str = "mask";
const EXTENSIONS: [&str; 2] = ["png", "ppm"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Drive,
    Hrf,
    Synthetic,
}

impl DatasetKind {
    /// Image count of the full public dataset.
    pub fn expected_count(self) -> Option<usize> {
        match self {
            DatasetKind::Drive => Some(40),
            DatasetKind::Hrf => Some(45),
            DatasetKind::Synthetic => None,
        }
    }

    /// `(width, height)` of the dataset's photographs.
    pub fn native_resolution(self) -> Option<(usize, usize)> {
        match self {
            DatasetKind::Drive => Some((565, 584)),
            DatasetKind::Hrf => Some((3504, 2336)),
            DatasetKind::Synthetic => None,
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "drive" => Ok(DatasetKind::Drive),
            "hrf" => Ok(DatasetKind::Hrf),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(Error::InvalidArgument(format!(
                "dataset kind must be drive, hrf or synthetic, got `{other}`"
            ))),
        }
    }
}

/// Paths are relative to the manifest root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    #[serde(default)]
    pub label: Option<PathBuf>,
    #[serde(default)]
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub kind: DatasetKind,
    /// `(width, height)` shared by every image, when known.
    #[serde(default)]
    pub native_resolution: Option<(usize, usize)>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Decodes one entry.
    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<FundusSample> {
        let rgb = read_rgb(&self.root.join(&entry.image))?;
        let label = entry.label.as_ref().map(|p| read_label(&self.root.join(p))).transpose()?;
        let mask = entry.mask.as_ref().map(|p| read_mask(&self.root.join(p))).transpose()?;
        FundusSample::new(rgb, mask, label, entry.id.clone())
    }

    /// Decodes every entry in manifest order.
    pub fn load_samples(&self) -> Result<Vec<FundusSample>> {
        self.entries.iter().map(|e| self.load_sample(e)).collect()
    }
}

fn list_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let read = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for item in read {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
                return Err(Error::Dataset(format!(
                    "both {} and {} share the stem `{stem}`",
                    prev.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(out)
}

fn relative(root: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(root).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

/// Scans `root/images`, pairing each image with `root/av/<stem>.*` and
/// `root/mask/<stem>.*` by file stem.
fn scan(root: &Path, kind: DatasetKind) -> Result<DatasetManifest> {
    let images = list_stems(&root.join(IMAGE_DIR))?;
    let labels = match root.join(LABEL_DIR) {
        d if d.is_dir() => list_stems(&d)?,
        _ => BTreeMap::new(),
    };
    let masks = match root.join(MASK_DIR) {
        d if d.is_dir() => list_stems(&d)?,
        _ => BTreeMap::new(),
    };
    for stem in labels.keys().chain(masks.keys()) {
        if !images.contains_key(stem) {
            return Err(Error::Dataset(format!("label or mask `{stem}` has no matching image")));
        }
    }
    let entries = images
        .iter()
        .map(|(stem, img)| ManifestEntry {
            id: stem.clone(),
            image: relative(root, img),
            label: labels.get(stem).map(|p| relative(root, p)),
            mask: masks.get(stem).map(|p| relative(root, p)),
        })
        .collect();
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        kind,
        native_resolution: kind.native_resolution(),
        entries,
    })
}

/// Reads `root/manifest.json` when present, otherwise scans the directory
/// layout. Entries come out sorted by id. In strict mode real datasets must
/// be complete.
pub fn load_manifest(root: &Path, kind: DatasetKind, strict: bool) -> Result<DatasetManifest> {
    let file = root.join(MANIFEST_FILE);
    let mut manifest = if file.is_file() {
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        if m.kind != kind {
            return Err(Error::Dataset(format!(
                "{} describes a {:?} dataset, expected {kind:?}",
                file.display(),
                m.kind
            )));
        }
        m.root = root.to_path_buf();
        m
    } else if root.join(IMAGE_DIR).is_dir() {
        scan(root, kind)?
    } else {
        return Err(Error::Dataset(format!(
            "{} has neither {MANIFEST_FILE} nor an `{IMAGE_DIR}` directory",
            root.display()
        )));
    };
    manifest.entries.sort_by(|a, b| a.id.cmp(&b.id));
    if manifest.entries.is_empty() {
        return Err(Error::Dataset(format!("no images found under {}", root.display())));
    }
    for e in &manifest.entries {
        for p in std::iter::once(&e.image).chain(&e.label).chain(&e.mask) {
            if !root.join(p).is_file() {
                return Err(Error::Dataset(format!("entry `{}`: missing file {}", e.id, p.display())));
            }
        }
    }
    if strict {
        if let Some(n) = kind.expected_count() {
            if manifest.entries.len() != n {
                return Err(Error::Dataset(format!(
                    "{kind:?} should have {n} images, found {}",
                    manifest.entries.len()
                )));
            }
        }
    }
    Ok(manifest)
}
