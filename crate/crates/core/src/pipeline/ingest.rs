//! Dataset discovery.
//!
//! Raindrop layout: `root/{train,val,test}/<stem>_rain.<ext>` paired with
//! `<stem>_clean.<ext>`; an optional `<stem>_mask.<ext>` holds a ground-truth
//! mask. Cityscapes layout: any image under `root` (recursively), with an
//! optional camera file `<stem>_camera.json` or `<stem>.json` beside it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::image::{load_image, load_mask, Image, Mask};
use crate::synthesis::CameraParams;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// File locations of one rainy/clean pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPaths {
    pub id: String,
    pub split: Split,
    pub rainy: PathBuf,
    pub clean: PathBuf,
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RaindropPair {
    pub id: String,
    pub split: Split,
    pub rainy: Image,
    pub clean: Image,
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, Default)]
pub struct RaindropDataset {
    pub pairs: Vec<RaindropPair>,
    /// Files with a `_rain`/`_clean` suffix but no partner.
    pub unpaired: usize,
}

impl RaindropDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &RaindropPair> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let n = |s| self.split(s).count();
        (n(Split::Train), n(Split::Val), n(Split::Test))
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Pairs files in one split directory by stem. Returns the pairs and the
/// number of unpaired files.
pub fn pair_split(dir: &Path, split: Split) -> Result<(Vec<PairPaths>, usize), PipelineError> {
    #[derive(Default)]
    struct Slots {
        rain: Option<PathBuf>,
        clean: Option<PathBuf>,
        mask: Option<PathBuf>,
    }
    let mut by_stem: BTreeMap<String, Slots> = BTreeMap::new();
    for path in sorted_entries(dir)? {
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let (id, role) = match stem.rsplit_once('_') {
            Some((id, role)) => (id.to_string(), role),
            None => continue,
        };
        let slot = by_stem.entry(id).or_default();
        match role {
            "rain" => slot.rain = Some(path),
            "clean" => slot.clean = Some(path),
            "mask" => slot.mask = Some(path),
            _ => {}
        }
    }
    let mut pairs = Vec::new();
    let mut unpaired = 0;
    for (id, s) in by_stem {
        match (s.rain, s.clean) {
            (Some(rainy), Some(clean)) => pairs.push(PairPaths {
                id,
                split,
                rainy,
                clean,
                mask: s.mask,
            }),
            (Some(p), None) | (None, Some(p)) => {
                tracing::warn!(path = %p.display(), "unpaired file skipped");
                unpaired += 1;
            }
            (None, None) => {}
        }
    }
    Ok((pairs, unpaired))
}

/// Lists the pairs of every split without decoding them.
pub fn scan_raindrop_dataset(root: &Path) -> Result<(Vec<PairPaths>, usize), PipelineError> {
    if !root.is_dir() {
        return Err(PipelineError::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut all = Vec::new();
    let mut unpaired = 0;
    for split in Split::ALL {
        let dir = root.join(split.dir_name());
        if !dir.is_dir() {
            return Err(PipelineError::Dataset(format!(
                "missing split directory {}",
                dir.display()
            )));
        }
        let (pairs, skipped) = pair_split(&dir, split)?;
        if pairs.is_empty() {
            return Err(PipelineError::Dataset(format!("split '{split}' has no pairs")));
        }
        unpaired += skipped;
        all.extend(pairs);
    }
    Ok((all, unpaired))
}

pub fn load_pair(p: &PairPaths) -> Result<RaindropPair, PipelineError> {
    let rainy = load_image(&p.rainy)?;
    let clean = load_image(&p.clean)?;
    if !rainy.same_shape(&clean) {
        return Err(PipelineError::Dataset(format!(
            "pair '{}': rainy {}x{}x{} vs clean {}x{}x{}",
            p.id,
            rainy.height(),
            rainy.width(),
            rainy.channels(),
            clean.height(),
            clean.width(),
            clean.channels()
        )));
    }
    let mask = p.mask.as_ref().map(load_mask).transpose()?;
    Ok(RaindropPair {
        id: p.id.clone(),
        split: p.split,
        rainy,
        clean,
        mask,
    })
}

/// Loads every pair of a Raindrop-layout dataset.
pub fn ingest_raindrop_dataset(root: &Path) -> Result<RaindropDataset, PipelineError> {
    let (paths, unpaired) = scan_raindrop_dataset(root)?;
    let pairs = paths.iter().map(load_pair).collect::<Result<Vec<_>, _>>()?;
    let ds = RaindropDataset { pairs, unpaired };
    let (tr, va, te) = ds.counts();
    tracing::info!(train = tr, val = va, test = te, unpaired, "raindrop dataset");
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct CityscapesImage {
    pub id: String,
    pub image: Image,
    pub camera: CameraParams,
    /// Whether `camera` came from a file rather than the default.
    pub calibrated: bool,
}

#[derive(Debug, Clone, Default)]
pub struct CityscapesSet {
    pub images: Vec<CityscapesImage>,
    pub unreadable: usize,
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    for p in sorted_entries(dir)? {
        if p.is_dir() {
            walk(&p, out)?;
        } else if is_image(&p) {
            out.push(p);
        }
    }
    Ok(())
}

fn camera_file(image: &Path) -> Option<PathBuf> {
    let stem = image.file_stem()?.to_str()?;
    let dir = image.parent()?;
    let base = stem.strip_suffix("_leftImg8bit").unwrap_or(stem);
    [format!("{base}_camera.json"), format!("{stem}.json")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

/// Loads clean street images and their camera calibration.
pub fn ingest_cityscapes(root: &Path) -> Result<CityscapesSet, PipelineError> {
    if !root.is_dir() {
        return Err(PipelineError::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let mut set = CityscapesSet::default();
    for path in files {
        let image = match load_image(&path) {
            Ok(img) => img,
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "unreadable image skipped");
                set.unreadable += 1;
                continue;
            }
        };
        let cam_path = camera_file(&path);
        let camera = CameraParams::load_or_default(cam_path.as_deref())?;
        let id = path
            .strip_prefix(root)
            .unwrap_or(&path)
            .with_extension("")
            .to_string_lossy()
            .replace(['/', '\\'], "_");
        set.images.push(CityscapesImage {
            id,
            image,
            camera,
            calibrated: cam_path.is_some(),
        });
    }
    if set.images.is_empty() {
        return Err(PipelineError::Dataset(format!("no readable images under {}", root.display())));
    }
    tracing::info!(images = set.images.len(), unreadable = set.unreadable, "cityscapes set");
    Ok(set)
}
