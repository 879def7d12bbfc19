//! Procedural articulated-sprite try-on data.

mod figure;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::io::{
    load_image, load_mask, load_posemap, save_image, save_mask, save_posemap,
};
use crate::imaging::{
    derive_bbox_mask, dilate_editable, silhouette, BinaryMask, BodyPart, Image, PoseMap,
    SkeletonPose, SILHOUETTE_LUMA,
};

pub use figure::{
    random_angles, render_figure, render_flat_lay, Angle, ArticulatedFigure, FigureJoints,
    GarmentClass, GarmentSpec, Pattern, Rendered, ANGLE_LIMIT, BASE_BOTTOM, BASE_TOP, FIT_TRIES,
    MAX_GARMENT_LUMA, SKIN,
};

pub const DEFAULT_SIZE: usize = 64;
pub const MAX_SIZE: usize = 256;
/// Fine-mask dilation radius at 64x64, scaled with image size.
pub const MASK_DILATION: usize = 5;
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseTarget {
    pub skeleton: SkeletonPose,
    pub pose_map: PoseMap,
    pub truth: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpriteSample {
    pub person: Image,
    pub garment: Image,
    pub pose_map: PoseMap,
    pub skeleton: SkeletonPose,
    pub fine_mask: BinaryMask,
    pub bbox_mask: BinaryMask,
    pub truth: Image,
    pub target: Option<PoseTarget>,
}

/// Garment region dilated by the scaled disc, with head pixels kept.
pub fn fine_mask(r: &Rendered) -> BinaryMask {
    let (h, w) = r.image.dims();
    let radius = MASK_DILATION * h.min(w) / DEFAULT_SIZE;
    let mut m = dilate_editable(&r.garment_region, radius.max(1));
    for y in 0..h {
        for x in 0..w {
            if r.pose_map.get(y, x) == BodyPart::Head as u8 {
                m.set_keep(y, x, true);
            }
        }
    }
    m
}

fn check_size(size: usize) -> Result<()> {
    if !(16..=MAX_SIZE).contains(&size) || !size.is_multiple_of(8) {
        return Err(Error::contract(format!(
            "image size {size} must be a multiple of 8 in 16..={MAX_SIZE}"
        )));
    }
    Ok(())
}

/// One sample: person in garment A, truth in garment B, flat-lay of B.
pub fn make_sample(rng: &mut impl Rng, size: usize, pose_transfer: bool) -> Result<SpriteSample> {
    check_size(size)?;
    let class = GarmentSpec::random_class(rng);
    let a = GarmentSpec::random(rng, class, size);
    let b = loop {
        let g = GarmentSpec::random(rng, class, size);
        if g.distinct_from(&a) {
            break g;
        }
    };
    let fig = ArticulatedFigure::random(rng, size);
    let person = render_figure(&fig, &a, size, size)?;
    let truth = render_figure(&person.figure, &b, size, size)?;
    let fine = fine_mask(&truth);
    let bbox = derive_bbox_mask(&fine)?;
    let target = if pose_transfer {
        let moved = person.figure.with_angles(random_angles(rng));
        let t = render_figure(&moved, &b, size, size)?;
        Some(PoseTarget {
            skeleton: t.skeleton,
            pose_map: t.pose_map,
            truth: t.image,
        })
    } else {
        None
    };
    Ok(SpriteSample {
        garment: render_flat_lay(&b, size)?,
        person: person.image,
        pose_map: person.pose_map,
        skeleton: person.skeleton,
        fine_mask: fine,
        bbox_mask: bbox,
        truth: truth.image,
        target,
    })
}

/// Union of the source fine mask and the dilated target silhouette (heads
/// kept): everything that may change when moving to the target pose. `None`
/// without a target.
pub fn pose_transfer_mask(s: &SpriteSample) -> Option<BinaryMask> {
    let t = s.target.as_ref()?;
    let (h, w) = s.person.dims();
    let radius = (MASK_DILATION * h.min(w) / DEFAULT_SIZE).max(1);
    let body = silhouette(&t.truth, SILHOUETTE_LUMA);
    let mut region = dilate_editable(&body, radius)
        .union_editable(&s.fine_mask)
        .expect("sample planes share dims");
    for y in 0..h {
        for x in 0..w {
            let head = BodyPart::Head as u8;
            if s.pose_map.get(y, x) == head || t.pose_map.get(y, x) == head {
                region.set_keep(y, x, true);
            }
        }
    }
    Some(region)
}

/// Per-index generator: the seed picks the key, the index picks the stream.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dir: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub seed: u64,
    pub image_size: usize,
    pub pose_transfer: bool,
    pub train_fraction: f64,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Format {
                path,
                msg: format!("unsupported manifest schema {}", m.schema),
            });
        }
        Ok(m)
    }

    pub fn dirs(&self, root: &Path, split: Split) -> Vec<PathBuf> {
        self.samples
            .iter()
            .filter(|e| e.split == split)
            .map(|e| root.join(&e.dir))
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|e| e.split == split).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub size: usize,
    pub pose_transfer: bool,
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_SIZE,
            pose_transfer: false,
            train_fraction: 0.9,
        }
    }
}

pub fn sample_dir_name(index: usize) -> String {
    format!("sample_{index:06}")
}

/// Writes `n` samples under `out_dir` plus `manifest.json`.
pub fn generate_dataset(
    n: usize,
    seed: u64,
    out_dir: &Path,
    cfg: &DatasetConfig,
) -> Result<Manifest> {
    check_size(cfg.size)?;
    if !(0.0..=1.0).contains(&cfg.train_fraction) {
        return Err(Error::contract("train fraction must lie in [0, 1]"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    (0..n).into_par_iter().try_for_each(|i| -> Result<()> {
        let s = make_sample(&mut sample_rng(seed, i), cfg.size, cfg.pose_transfer)?;
        save_sample(&s, &out_dir.join(sample_dir_name(i)))
    })?;

    let n_train = (n as f64 * cfg.train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sample_rng(seed, usize::MAX));
    let mut split = vec![Split::Test; n];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        seed,
        image_size: cfg.size,
        pose_transfer: cfg.pose_transfer,
        train_fraction: cfg.train_fraction,
        samples: (0..n)
            .map(|i| ManifestEntry {
                dir: sample_dir_name(i),
                split: split[i],
            })
            .collect(),
    };
    let path = out_dir.join(Manifest::FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn save_sample(s: &SpriteSample, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_image(&s.person, &dir.join("person.png"))?;
    save_image(&s.garment, &dir.join("garment.png"))?;
    save_posemap(&s.pose_map, &dir.join("posemap.png"))?;
    s.skeleton.save(&dir.join("skeleton.json"))?;
    save_mask(&s.fine_mask, &dir.join("mask_fine.png"))?;
    save_mask(&s.bbox_mask, &dir.join("mask_bbox.png"))?;
    save_image(&s.truth, &dir.join("truth.png"))?;
    if let Some(t) = &s.target {
        t.skeleton.save(&dir.join("target_skeleton.json"))?;
        save_posemap(&t.pose_map, &dir.join("target_posemap.png"))?;
        save_image(&t.truth, &dir.join("target_truth.png"))?;
    }
    Ok(())
}

pub fn load_sample(dir: &Path) -> Result<SpriteSample> {
    let target = if dir.join("target_truth.png").exists() {
        Some(PoseTarget {
            skeleton: SkeletonPose::load(&dir.join("target_skeleton.json"))?,
            pose_map: load_posemap(&dir.join("target_posemap.png"))?,
            truth: load_image(&dir.join("target_truth.png"))?,
        })
    } else {
        None
    };
    Ok(SpriteSample {
        person: load_image(&dir.join("person.png"))?,
        garment: load_image(&dir.join("garment.png"))?,
        pose_map: load_posemap(&dir.join("posemap.png"))?,
        skeleton: SkeletonPose::load(&dir.join("skeleton.json"))?,
        fine_mask: load_mask(&dir.join("mask_fine.png"))?,
        bbox_mask: load_mask(&dir.join("mask_bbox.png"))?,
        truth: load_image(&dir.join("truth.png"))?,
        target,
    })
}

/// Loads every sample of `split`, in manifest order.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<SpriteSample>> {
    let m = Manifest::load(root)?;
    m.dirs(root, split)
        .par_iter()
        .map(|d| load_sample(d))
        .collect()
}
