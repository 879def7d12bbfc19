use crate::error::{Error, Result};

use super::image::{Image, PATCH};

/// Strictly binary mask. `1` marks preserved context, `0` the editable region.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("mask", &[height, width], &[data.len()]));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::contract("mask values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn all_keep(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn all_edit(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    /// `f(y, x)` returns true where the pixel is kept.
    pub fn from_keep_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self {
            height,
            width,
            data,
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

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn keep(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    #[inline]
    pub fn editable(&self, y: usize, x: usize) -> bool {
        !self.keep(y, x)
    }

    pub fn set_keep(&mut self, y: usize, x: usize, keep: bool) {
        self.data[y * self.width + x] = keep as u8;
    }

    pub fn editable_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 0).count()
    }

    /// Edit indicator (`1` = inpaint) as floats, row-major.
    pub fn edit_plane(&self) -> Vec<f32> {
        self.data.iter().map(|&v| (1 - v) as f32).collect()
    }

    /// Minimal rectangle covering every editable pixel.
    pub fn editable_bounds(&self) -> Option<Rect> {
        let mut r: Option<Rect> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.editable(y, x) {
                    r = Some(match r {
                        None => Rect {
                            y0: y,
                            x0: x,
                            y1: y,
                            x1: x,
                        },
                        Some(b) => Rect {
                            y0: b.y0.min(y),
                            x0: b.x0.min(x),
                            y1: b.y1.max(y),
                            x1: b.x1.max(x),
                        },
                    });
                }
            }
        }
        r
    }

    /// Pixelwise OR of the editable regions.
    pub fn union_editable(&self, other: &BinaryMask) -> Result<BinaryMask> {
        same_dims(self.dims(), other.dims(), "mask union")?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a & b)
                .collect(),
        })
    }
}

fn same_dims(a: (usize, usize), b: (usize, usize), op: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, &[a.0, a.1], &[b.0, b.1]));
    }
    Ok(())
}

/// Editable region becomes the minimal axis-aligned rectangle covering the
/// editable pixels of `fine`; everything else is preserved.
pub fn derive_bbox_mask(fine: &BinaryMask) -> Result<BinaryMask> {
    let r = fine.editable_bounds().ok_or(Error::EmptyMask)?;
    Ok(BinaryMask::from_keep_fn(fine.height, fine.width, |y, x| {
        !(y >= r.y0 && y <= r.y1 && x >= r.x0 && x <= r.x1)
    }))
}

/// Reduces a pixel mask by `factor`. A cell is editable iff any pixel it
/// covers is editable.
pub fn downsample_mask(keep: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    if factor == 0 || !keep.height.is_multiple_of(factor) || !keep.width.is_multiple_of(factor) {
        return Err(Error::shape(
            "downsample_mask",
            &[keep.height, keep.width],
            &[factor],
        ));
    }
    let (h, w) = (keep.height / factor, keep.width / factor);
    Ok(BinaryMask::from_keep_fn(h, w, |cy, cx| {
        (0..factor).all(|dy| (0..factor).all(|dx| keep.keep(cy * factor + dy, cx * factor + dx)))
    }))
}

/// Latent-resolution mask for the codec's patch size.
pub fn downsample_to_latent(keep: &BinaryMask) -> Result<BinaryMask> {
    downsample_mask(keep, PATCH)
}

/// Grows the editable region by a disc of `radius` pixels.
pub fn dilate_editable(keep: &BinaryMask, radius: usize) -> BinaryMask {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let (h, w) = (keep.height as isize, keep.width as isize);
    BinaryMask::from_keep_fn(keep.height, keep.width, |y, x| {
        !offsets.iter().any(|&(dy, dx)| {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            yy >= 0 && yy < h && xx >= 0 && xx < w && keep.editable(yy as usize, xx as usize)
        })
    })
}

/// `person` where kept, `pose` where editable.
pub fn stitch_pose_into_mask(person: &Image, pose: &Image, keep: &BinaryMask) -> Result<Image> {
    same_dims(person.dims(), pose.dims(), "stitch person/pose")?;
    same_dims(person.dims(), keep.dims(), "stitch person/mask")?;
    let mut out = person.clone();
    for y in 0..keep.height {
        for x in 0..keep.width {
            if keep.editable(y, x) {
                out.put(y, x, pose.get(y, x));
            }
        }
    }
    Ok(out)
}

/// `person ⊗ keep`: the editable region is blacked out.
pub fn apply_keep(person: &Image, keep: &BinaryMask) -> Result<Image> {
    let black = Image::black(person.height(), person.width())?;
    stitch_pose_into_mask(person, &black, keep)
}

/// Foreground on a white background: pixels with luma below `threshold`.
/// The returned mask marks foreground as `0` (editable polarity), so it
/// composes with [`BinaryMask::editable`] queries.
pub fn silhouette(img: &Image, threshold: f32) -> BinaryMask {
    let l = img.luma_plane();
    BinaryMask::from_keep_fn(img.height(), img.width(), |y, x| {
        l[y * img.width() + x] >= threshold
    })
}

/// Luma threshold separating figure from the white background.
pub const SILHOUETTE_LUMA: f32 = 0.95;
