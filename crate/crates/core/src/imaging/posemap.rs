use crate::error::{Error, Result};

use super::image::Image;

/// Number of body-part labels (excluding background).
pub const PARTS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum BodyPart {
    Head = 1,
    Torso = 2,
    RightUpperArm = 3,
    RightLowerArm = 4,
    LeftUpperArm = 5,
    LeftLowerArm = 6,
    RightLeg = 7,
    LeftLeg = 8,
}

/// Label -> RGB. Index 0 is background. Entries are pairwise distinct, and so
/// are their luma values, so part identity survives grayscale conversion.
pub const PALETTE: [[u8; 3]; PARTS as usize + 1] = [
    [0, 0, 0],
    [254, 232, 56],
    [20, 120, 220],
    [240, 60, 60],
    [250, 150, 110],
    [60, 200, 90],
    [150, 240, 170],
    [150, 60, 200],
    [90, 200, 230],
];

/// Dense per-pixel body-part labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoseMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl PoseMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape("pose map", &[height, width], &[labels.len()]));
        }
        if let Some(l) = labels.iter().find(|&&l| l > PARTS) {
            return Err(Error::contract(format!("pose label {l} exceeds {PARTS}")));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, part: BodyPart) {
        self.labels[y * self.width + x] = part as u8;
    }

    pub fn background_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&l| l == 0).count() as f64 / self.labels.len() as f64
    }

    pub fn count(&self, part: BodyPart) -> usize {
        self.labels.iter().filter(|&&l| l == part as u8).count()
    }
}

pub fn palette_rgb(label: u8) -> [f32; 3] {
    PALETTE[label as usize].map(|v| v as f32 / 255.0)
}

/// Label 0 -> black, label k -> `PALETTE[k]`.
pub fn colorize_pose_map(pm: &PoseMap) -> Result<Image> {
    let mut img = Image::black(pm.height, pm.width)?;
    for y in 0..pm.height {
        for x in 0..pm.width {
            let l = pm.get(y, x);
            if l != 0 {
                img.put(y, x, palette_rgb(l));
            }
        }
    }
    Ok(img)
}
