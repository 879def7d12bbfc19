//! Mixed-mask training with condition dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::conditioning::{MaskStrategy, PoseInputs};
use crate::error::{Error, Result};
use crate::imaging::derive_bbox_mask;
use crate::numerics::{AdamState, Graph, Tensor};
use crate::synthdata::{pose_transfer_mask, SpriteSample};

use super::model::{PreparedSample, TryOnModel};

/// Fine-grained with probability `mix`, bounding box otherwise.
pub fn choose_strategy(rng: &mut impl Rng, mix: f64) -> MaskStrategy {
    if rng.random_bool(mix) {
        MaskStrategy::FineGrained
    } else {
        MaskStrategy::BoundingBox
    }
}

pub fn randn(rng: &mut impl Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Encodes the target and the conditions under both masks. With
/// `pose_transfer` and a target present, the model is asked to repaint the
/// figure into the target pose.
pub fn prepare_sample(
    model: &TryOnModel,
    s: &SpriteSample,
    pose_transfer: bool,
) -> Result<PreparedSample> {
    let mode = model.mode();
    match (&s.target, pose_transfer) {
        (Some(t), true) => {
            let fine = pose_transfer_mask(s).expect("target present");
            let bbox = derive_bbox_mask(&fine)?;
            let pose = PoseInputs {
                skeleton: mode.uses_skeleton().then_some(&t.skeleton),
                pose_map: mode.uses_pose_map().then_some(&t.pose_map),
            };
            Ok(PreparedSample {
                x0: model.codec.encode(&t.truth)?.into_tensor(),
                fine: model.condition(&s.person, &s.garment, pose, &fine)?,
                bbox: model.condition(&s.person, &s.garment, pose, &bbox)?,
            })
        }
        _ => {
            let pose = PoseInputs {
                skeleton: mode.uses_skeleton().then_some(&s.skeleton),
                pose_map: mode.uses_pose_map().then_some(&s.pose_map),
            };
            Ok(PreparedSample {
                x0: model.codec.encode(&s.truth)?.into_tensor(),
                fine: model.condition(&s.person, &s.garment, pose, &s.fine_mask)?,
                bbox: model.condition(&s.person, &s.garment, pose, &s.bbox_mask)?,
            })
        }
    }
}

pub fn prepare_all(model: &TryOnModel, samples: &[SpriteSample]) -> Result<Vec<PreparedSample>> {
    samples
        .par_iter()
        .map(|s| prepare_sample(model, s, model.config.pose_transfer))
        .collect()
}

/// Per-sample random choices of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub index: usize,
    pub strategy: MaskStrategy,
    pub blank: bool,
    pub t: usize,
}

pub struct Trainer {
    pub model: TryOnModel,
    pub adam: AdamState,
    pub losses: Vec<f32>,
    rng: ChaCha8Rng,
    data: Vec<PreparedSample>,
}

impl Trainer {
    pub fn new(model: TryOnModel, data: Vec<PreparedSample>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        let (h, w) = data[0].fine.latent_dims();
        if data.iter().any(|d| d.fine.latent_dims() != (h, w)) {
            return Err(Error::contract("training samples differ in size"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        rng.set_stream(1);
        Ok(Self {
            adam: AdamState::new(model.config.adam),
            losses: Vec::new(),
            rng,
            data,
            model,
        })
    }

    fn draw(&mut self) -> Draw {
        let cfg = &self.model.config;
        let index = self.rng.random_range(0..self.data.len());
        let strategy = choose_strategy(&mut self.rng, cfg.mask_mix);
        let blank = self.rng.random_bool(cfg.guidance.dropout);
        let t = self.rng.random_range(1..=self.model.schedule.steps());
        Draw {
            index,
            strategy,
            blank,
            t,
        }
    }

    /// One Adam update on a freshly drawn batch; returns the batch loss.
    pub fn train_step(&mut self) -> Result<f32> {
        let mode = self.model.mode();
        let mut inputs = Vec::new();
        let mut eps_all = Vec::new();
        let mut ts = Vec::new();
        for _ in 0..self.model.config.batch {
            let d = self.draw();
            let s = &self.data[d.index];
            let eps = randn(&mut self.rng, s.x0.shape());
            let x_t = self.model.schedule.forward_diffuse(&s.x0, d.t, &eps)?;
            inputs.push(s.cond(d.strategy).stacked(mode, &x_t, d.blank)?);
            eps_all.push(eps);
            ts.push(d.t);
        }
        let x = Tensor::concat_batch(&inputs.iter().collect::<Vec<_>>())?;
        let eps = Tensor::concat_batch(&eps_all.iter().collect::<Vec<_>>())?;
        let block = eps.shape()[3];

        let mut g = Graph::new();
        let xi = g.constant(x)?;
        let target = g.constant(eps)?;
        let out = self.model.net.forward(&mut g, xi, &ts)?;
        let first = g.slice_width(out, 0, block)?;
        let loss = g.mse(first, target)?;
        let value = g.value(loss).item()?;
        let mut grads = g.backward(loss)?;
        let grads = g.param_grads(&mut grads);
        self.adam.step(&mut self.model.net.params, &grads)?;
        self.losses.push(value);
        Ok(value)
    }

    /// Runs `steps` updates, calling `log(step, loss)` after each.
    pub fn run(&mut self, steps: usize, mut log: impl FnMut(usize, f32)) -> Result<()> {
        for _ in 0..steps {
            let l = self.train_step()?;
            log(self.losses.len(), l);
        }
        Ok(())
    }

    pub fn into_model(self) -> TryOnModel {
        self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::ConditioningMode;
    use crate::diffusion::model::RunConfig;
    use crate::diffusion::unet::NetConfig;
    use crate::synthdata::{make_sample, sample_rng};

    fn small_config(mode: ConditioningMode) -> RunConfig {
        RunConfig {
            mode,
            batch: 2,
            net: NetConfig {
                base_channels: 8,
                levels: 2,
                blocks_per_level: 1,
                groups: 4,
                time_freqs: 8,
                time_channels: 16,
            },
            ..RunConfig::default()
        }
    }

    fn corpus(n: usize) -> Vec<SpriteSample> {
        (0..n)
            .map(|i| make_sample(&mut sample_rng(99, i), 64, false).unwrap())
            .collect()
    }

    #[test]
    fn strategy_mix_is_fair() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fine = (0..10_000)
            .filter(|_| choose_strategy(&mut rng, 0.5) == MaskStrategy::FineGrained)
            .count();
        assert!((4800..=5200).contains(&fine));
        assert!((0..100).all(|_| choose_strategy(&mut rng, 1.0) == MaskStrategy::FineGrained));
    }

    #[test]
    fn untrained_loss_is_finite_and_positive() {
        for mode in [ConditioningMode::PoseFree, ConditioningMode::JointsConcat] {
            let model = TryOnModel::new(small_config(mode)).unwrap();
            let data = prepare_all(&model, &corpus(4)).unwrap();
            let mut tr = Trainer::new(model, data).unwrap();
            let l = tr.train_step().unwrap();
            assert!(l.is_finite() && l > 0.0);
        }
    }

    #[test]
    fn loss_trajectory_is_deterministic() {
        let run = || {
            let model = TryOnModel::new(small_config(ConditioningMode::PoseStitchGray)).unwrap();
            let data = prepare_all(&model, &corpus(4)).unwrap();
            let mut tr = Trainer::new(model, data).unwrap();
            tr.run(20, |_, _| {}).unwrap();
            tr.losses
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn stitch_blank_drops_pose() {
        let model = TryOnModel::new(small_config(ConditioningMode::PoseStitchGray)).unwrap();
        let p = prepare_sample(&model, &corpus(1)[0], false).unwrap();
        assert_ne!(p.bbox.masked, p.bbox.blank_masked);
        let x = Tensor::zeros([1, 4, 8, 8]);
        let full = p.bbox.stacked(model.mode(), &x, false).unwrap();
        let blank = p.bbox.stacked(model.mode(), &x, true).unwrap();
        assert_eq!(full.shape(), [1, 9, 8, 16]);
        // Garment columns are zero in the blank input.
        for c in 4..8 {
            for y in 0..8 {
                for xx in 8..16 {
                    assert_eq!(blank.at([0, c, y, xx]), 0.0);
                }
            }
        }
        // Mask planes agree.
        for y in 0..8 {
            for xx in 0..16 {
                assert_eq!(full.at([0, 8, y, xx]), blank.at([0, 8, y, xx]));
            }
        }
    }

    #[test]
    fn pose_transfer_uses_target() {
        let mut cfg = small_config(ConditioningMode::PoseStitchGray);
        cfg.pose_transfer = true;
        let model = TryOnModel::new(cfg).unwrap();
        let s = make_sample(&mut sample_rng(98, 0), 64, true).unwrap();
        let p = prepare_sample(&model, &s, true).unwrap();
        let want = model
            .codec
            .encode(&s.target.as_ref().unwrap().truth)
            .unwrap();
        assert_eq!(&p.x0, want.tensor());
    }
}
