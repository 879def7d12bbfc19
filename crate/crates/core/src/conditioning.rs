//! Model-input layouts for every pose-conditioning configuration.
//!
//! Stitch modes paint the pose rendering into the editable region of the
//! person image before encoding. Concat modes append the pose rendering as a
//! third latent block to the right of the garment. The network input is always
//! 9 channels: noisy latent (4), masked/condition latents (4), edit mask (1).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    apply_keep, colorize_pose_map, rasterize_skeleton, stitch_pose_into_mask, to_grayscale,
    BinaryMask, Image, PoseMap, SkeletonPose,
};
use crate::latent_codec::{Latent, LATENT_CHANNELS};
use crate::numerics::Tensor;

/// Channels of the stacked network input.
pub const INPUT_CHANNELS: usize = 2 * LATENT_CHANNELS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditioningMode {
    PoseFree,
    JointsStitch,
    JointsConcat,
    PoseConcat,
    PoseConcatGray,
    PoseStitchGray,
}

impl ConditioningMode {
    pub const ALL: [ConditioningMode; 6] = [
        ConditioningMode::PoseFree,
        ConditioningMode::JointsStitch,
        ConditioningMode::JointsConcat,
        ConditioningMode::PoseConcat,
        ConditioningMode::PoseConcatGray,
        ConditioningMode::PoseStitchGray,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConditioningMode::PoseFree => "pose-free",
            ConditioningMode::JointsStitch => "joints-stitch",
            ConditioningMode::JointsConcat => "joints-concat",
            ConditioningMode::PoseConcat => "pose-concat",
            ConditioningMode::PoseConcatGray => "pose-concat-gray",
            ConditioningMode::PoseStitchGray => "pose-stitch-gray",
        }
    }

    pub fn is_concat(self) -> bool {
        matches!(
            self,
            ConditioningMode::JointsConcat
                | ConditioningMode::PoseConcat
                | ConditioningMode::PoseConcatGray
        )
    }

    pub fn is_stitch(self) -> bool {
        matches!(
            self,
            ConditioningMode::JointsStitch | ConditioningMode::PoseStitchGray
        )
    }

    pub fn uses_skeleton(self) -> bool {
        matches!(
            self,
            ConditioningMode::JointsStitch | ConditioningMode::JointsConcat
        )
    }

    pub fn uses_pose_map(self) -> bool {
        matches!(
            self,
            ConditioningMode::PoseConcat
                | ConditioningMode::PoseConcatGray
                | ConditioningMode::PoseStitchGray
        )
    }

    /// Number of latent blocks laid side by side.
    pub fn width_multiplier(self) -> usize {
        if self.is_concat() {
            3
        } else {
            2
        }
    }
}

impl fmt::Display for ConditioningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for ConditioningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown conditioning mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskStrategy {
    FineGrained,
    BoundingBox,
}

impl MaskStrategy {
    pub fn name(self) -> &'static str {
        match self {
            MaskStrategy::FineGrained => "fine-grained",
            MaskStrategy::BoundingBox => "bounding-box",
        }
    }
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine-grained" => Ok(MaskStrategy::FineGrained),
            "bounding-box" => Ok(MaskStrategy::BoundingBox),
            _ => Err(Error::contract(format!("unknown mask strategy `{s}`"))),
        }
    }
}

/// Pose inputs available for a request; modes pick the one they need.
#[derive(Debug, Clone, Copy, Default)]
pub struct PoseInputs<'a> {
    pub skeleton: Option<&'a SkeletonPose>,
    pub pose_map: Option<&'a PoseMap>,
}

/// Pixel-space condition images before encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionImages {
    pub masked_person: Image,
    pub side_pose: Option<Image>,
}

/// Renders the pose image a mode consumes.
pub fn render_pose(
    mode: ConditioningMode,
    pose: PoseInputs<'_>,
    h: usize,
    w: usize,
) -> Result<Option<Image>> {
    let missing = |what: &str| Error::contract(format!("mode `{mode}` requires a {what}"));
    Ok(match mode {
        ConditioningMode::PoseFree => None,
        ConditioningMode::JointsStitch | ConditioningMode::JointsConcat => {
            let sk = pose.skeleton.ok_or_else(|| missing("skeleton"))?;
            Some(rasterize_skeleton(sk, h, w, true)?)
        }
        ConditioningMode::PoseConcat => {
            let pm = pose.pose_map.ok_or_else(|| missing("pose map"))?;
            Some(colorize_pose_map(pm)?)
        }
        ConditioningMode::PoseConcatGray | ConditioningMode::PoseStitchGray => {
            let pm = pose.pose_map.ok_or_else(|| missing("pose map"))?;
            Some(to_grayscale(&colorize_pose_map(pm)?))
        }
    })
}

pub fn build_condition_image(
    mode: ConditioningMode,
    person: &Image,
    keep: &BinaryMask,
    pose: PoseInputs<'_>,
) -> Result<ConditionImages> {
    let (h, w) = person.dims();
    if keep.dims() != (h, w) {
        return Err(Error::shape(
            "condition mask",
            &[h, w],
            &[keep.height(), keep.width()],
        ));
    }
    let rendered = render_pose(mode, pose, h, w)?;
    if let Some(r) = &rendered {
        if r.dims() != (h, w) {
            return Err(Error::shape(
                "condition pose",
                &[h, w],
                &[r.height(), r.width()],
            ));
        }
    }
    match rendered {
        Some(p) if mode.is_stitch() => Ok(ConditionImages {
            masked_person: stitch_pose_into_mask(person, &p, keep)?,
            side_pose: None,
        }),
        side_pose => Ok(ConditionImages {
            masked_person: apply_keep(person, keep)?,
            side_pose,
        }),
    }
}

/// The three width-extended planes that stack into the 9-channel input.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBundle {
    pub x_noisy: Tensor,
    pub x_masked: Tensor,
    pub mask_plane: Tensor,
    pub width_multiplier: usize,
    pub mode: ConditioningMode,
}

impl LatentBundle {
    /// `(1, 9, H/8, m * W/8)`.
    pub fn stacked(&self) -> Tensor {
        Tensor::concat_channels(&[&self.x_noisy, &self.x_masked, &self.mask_plane])
            .expect("bundle planes share spatial dims")
    }

    pub fn block_width(&self) -> usize {
        self.x_noisy.shape()[3] / self.width_multiplier
    }
}

/// Edit indicator (`1` = inpaint) of a latent-resolution keep mask, `(1, 1, h, w)`.
pub fn edit_plane(keep_latent: &BinaryMask) -> Tensor {
    Tensor::new(
        [1, 1, keep_latent.height(), keep_latent.width()],
        keep_latent.edit_plane(),
    )
    .expect("mask dims are consistent")
}

pub fn assemble_input(
    mode: ConditioningMode,
    x_t: &Latent,
    masked: &Latent,
    garment: &Latent,
    pose_side: Option<&Latent>,
    edit_mask_plane: &Tensor,
) -> Result<LatentBundle> {
    if mode.is_concat() != pose_side.is_some() {
        return Err(Error::contract(format!(
            "mode `{mode}` {} a pose side image",
            if mode.is_concat() {
                "requires"
            } else {
                "does not take"
            }
        )));
    }
    let (h, w) = x_t.dims();
    for lat in [masked, garment].into_iter().chain(pose_side) {
        if lat.dims() != (h, w) {
            return Err(Error::shape(
                "assemble_input",
                &x_t.tensor().shape(),
                &lat.tensor().shape(),
            ));
        }
    }
    let [mn, mc, mh, mw] = edit_mask_plane.shape();
    if (mn, mc, mh, mw) != (1, 1, h, w) {
        return Err(Error::shape(
            "assemble_input mask",
            &[1, 1, h, w],
            &edit_mask_plane.shape(),
        ));
    }
    let m = mode.width_multiplier();
    let zeros4 = Tensor::zeros([1, LATENT_CHANNELS, h, w]);
    let zeros1 = Tensor::zeros([1, 1, h, w]);

    let mut masked_parts = vec![masked.tensor(), garment.tensor()];
    masked_parts.extend(pose_side.map(Latent::tensor));
    let mut noisy_parts = vec![x_t.tensor()];
    let mut mask_parts = vec![edit_mask_plane];
    for _ in 1..m {
        noisy_parts.push(&zeros4);
        mask_parts.push(&zeros1);
    }
    Ok(LatentBundle {
        x_noisy: Tensor::concat_width(&noisy_parts)?,
        x_masked: Tensor::concat_width(&masked_parts)?,
        mask_plane: Tensor::concat_width(&mask_parts)?,
        width_multiplier: m,
        mode,
    })
}

/// Leftmost `1/width_multiplier` of the columns.
pub fn crop_output(model_out: &Tensor, width_multiplier: usize) -> Result<Tensor> {
    let w = model_out.shape()[3];
    if width_multiplier == 0 || !w.is_multiple_of(width_multiplier) {
        return Err(Error::shape(
            "crop_output",
            &model_out.shape(),
            &[width_multiplier],
        ));
    }
    model_out.slice_width(0, w / width_multiplier)
}

pub fn crop_for_mode(model_out: &Tensor, mode: ConditioningMode) -> Result<Tensor> {
    crop_output(model_out, mode.width_multiplier())
}
