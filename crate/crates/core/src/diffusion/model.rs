//! Run configuration, the trained model bundle, and condition latents.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditioning::{
    assemble_input, build_condition_image, edit_plane, ConditioningMode, MaskStrategy, PoseInputs,
};
use crate::error::{Error, Result};
use crate::imaging::{apply_keep, downsample_to_latent, BinaryMask, Image};
use crate::latent_codec::{Codec, CodecConfig, Latent, LatentKind};
use crate::numerics::{AdamConfig, Checkpoint, Tensor};

use super::schedule::{GuidanceConfig, NoiseSchedule, ScheduleConfig};
use super::unet::{DenoiserNet, NetConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
/// Missing keys take their defaults; unknown keys are rejected.
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub image_size: usize,
    pub mode: ConditioningMode,
    /// Probability of the fine-grained mask per training sample.
    pub mask_mix: f64,
    pub schedule: ScheduleConfig,
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub ddim_steps: usize,
    pub guidance: GuidanceConfig,
    /// Clamp each predicted clean latent to the codec's image range while sampling.
    pub clip_x0: bool,
    pub net: NetConfig,
    pub codec: CodecConfig,
    /// Train on pose-transfer pairs when the corpus has them.
    pub pose_transfer: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            mode: ConditioningMode::PoseStitchGray,
            mask_mix: 0.5,
            schedule: ScheduleConfig::default(),
            steps: 5000,
            batch: 8,
            adam: AdamConfig::default(),
            seed: 0,
            ddim_steps: 25,
            guidance: GuidanceConfig::default(),
            clip_x0: true,
            net: NetConfig::default(),
            codec: CodecConfig::default(),
            pose_transfer: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.guidance.validate()?;
        if !(0.0..=1.0).contains(&self.mask_mix) {
            return Err(Error::contract("mask_mix must lie in [0, 1]"));
        }
        if self.batch == 0 || self.ddim_steps == 0 || self.ddim_steps > self.schedule.steps {
            return Err(Error::contract(
                "batch and ddim_steps must be positive, ddim_steps <= T",
            ));
        }
        if !self.image_size.is_multiple_of(8) || self.image_size == 0 {
            return Err(Error::contract(
                "image_size must be a positive multiple of 8",
            ));
        }
        self.net
            .check_input(self.image_size / 8, self.image_size / 8)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Network, schedule, and codec fixed by a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct TryOnModel {
    pub config: RunConfig,
    pub net: DenoiserNet,
    pub schedule: NoiseSchedule,
    pub codec: Codec,
}

impl TryOnModel {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let net = DenoiserNet::new(config.net, config.seed)?;
        Self::with_net(config, net)
    }

    fn with_net(config: RunConfig, net: DenoiserNet) -> Result<Self> {
        Ok(Self {
            schedule: NoiseSchedule::linear(&config.schedule)?,
            codec: Codec::new(config.codec),
            net,
            config,
        })
    }

    pub fn mode(&self) -> ConditioningMode {
        self.config.mode
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_json: self.config.to_json(),
            params: self.net.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let config =
            RunConfig::from_json(&ck.config_json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let net = DenoiserNet::from_params(config.net, ck.params)?;
        Self::with_net(config, net)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    /// Condition latents for one request.
    pub fn condition(
        &self,
        person: &Image,
        garment: &Image,
        pose: PoseInputs<'_>,
        keep: &BinaryMask,
    ) -> Result<CondLatents> {
        let mode = self.mode();
        if garment.dims() != person.dims() {
            return Err(Error::shape(
                "garment",
                &[person.height(), person.width()],
                &[garment.height(), garment.width()],
            ));
        }
        let imgs = build_condition_image(mode, person, keep, pose)?;
        let masked = self
            .codec
            .encode_as(&imgs.masked_person, LatentKind::Masked)?;
        let blank_masked = if mode.is_stitch() {
            self.codec
                .encode_as(&apply_keep(person, keep)?, LatentKind::Masked)?
        } else {
            masked.clone()
        };
        let pose_side = imgs
            .side_pose
            .as_ref()
            .map(|p| self.codec.encode_as(p, LatentKind::Pose))
            .transpose()?;
        Ok(CondLatents {
            masked,
            blank_masked,
            garment: self.codec.encode_as(garment, LatentKind::Garment)?,
            pose_side,
            mask_plane: edit_plane(&downsample_to_latent(keep)?),
        })
    }
}

/// Encoded conditions for one sample under one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CondLatents {
    pub masked: Latent,
    /// The masked person without any stitched pose.
    pub blank_masked: Latent,
    pub garment: Latent,
    pub pose_side: Option<Latent>,
    pub mask_plane: Tensor,
}

impl CondLatents {
    /// `(1, 9, h, m * w)` network input around `x_t`. The blank variant
    /// zeroes the garment and pose columns and drops stitched pose content.
    pub fn stacked(&self, mode: ConditioningMode, x_t: &Tensor, blank: bool) -> Result<Tensor> {
        let xt = Latent::new(LatentKind::Noisy, x_t.clone())?;
        let (h, w) = xt.dims();
        let zeros = Latent::zeros(LatentKind::Garment, h, w);
        let zero_pose = Latent::zeros(LatentKind::Pose, h, w);
        let bundle = if blank {
            assemble_input(
                mode,
                &xt,
                &self.blank_masked,
                &zeros,
                self.pose_side.as_ref().map(|_| &zero_pose),
                &self.mask_plane,
            )?
        } else {
            assemble_input(
                mode,
                &xt,
                &self.masked,
                &self.garment,
                self.pose_side.as_ref(),
                &self.mask_plane,
            )?
        };
        Ok(bundle.stacked())
    }

    pub fn latent_dims(&self) -> (usize, usize) {
        self.masked.dims()
    }
}

/// A training record: target latent plus conditions for both mask strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub x0: Tensor,
    pub fine: CondLatents,
    pub bbox: CondLatents,
}

impl PreparedSample {
    pub fn cond(&self, s: MaskStrategy) -> &CondLatents {
        match s {
            MaskStrategy::FineGrained => &self.fine,
            MaskStrategy::BoundingBox => &self.bbox,
        }
    }
}
