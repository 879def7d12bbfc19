//! Guided DDIM sampling and compositing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{crop_for_mode, ConditioningMode, MaskStrategy, PoseInputs};
use crate::error::{Error, Result};
use crate::imaging::{derive_bbox_mask, BinaryMask, Image};
use crate::latent_codec::{Latent, LatentKind, LATENT_CHANNELS};
use crate::numerics::Tensor;

use super::model::{CondLatents, TryOnModel};
use super::schedule::{cfg_noise, mix};
use super::train::randn;

/// Initial noise for one request.
pub fn initial_noise(seed: u64, h: usize, w: usize) -> Tensor {
    randn(
        &mut ChaCha8Rng::seed_from_u64(seed),
        [1, LATENT_CHANNELS, h, w],
    )
}

/// Runs the full guided ladder for a batch of requests and returns the clean
/// first-block latent of each.
pub fn sample_latents(
    model: &TryOnModel,
    conds: &[&CondLatents],
    seeds: &[u64],
) -> Result<Vec<Tensor>> {
    if conds.len() != seeds.len() {
        return Err(Error::contract("one seed per request"));
    }
    let Some(first) = conds.first() else {
        return Ok(Vec::new());
    };
    let (h, w) = first.latent_dims();
    if conds.iter().any(|c| c.latent_dims() != (h, w)) {
        return Err(Error::contract("batched requests must share latent dims"));
    }
    let mode = model.mode();
    let scale = model.config.guidance.scale;
    let bounds = model.codec.latent_bounds();
    let n = conds.len();
    let mut xs: Vec<Tensor> = seeds.iter().map(|&s| initial_noise(s, h, w)).collect();
    for (t, t_prev) in model.schedule.ddim_ladder(model.config.ddim_steps)? {
        let mut inputs = Vec::with_capacity(2 * n);
        for blank in [false, true] {
            for (c, x) in conds.iter().zip(&xs) {
                inputs.push(c.stacked(mode, x, blank)?);
            }
        }
        let batch = Tensor::concat_batch(&inputs.iter().collect::<Vec<_>>())?;
        let eps = crop_for_mode(&model.net.predict(&batch, &vec![t; 2 * n])?, mode)?;
        for (i, x) in xs.iter_mut().enumerate() {
            let guided = cfg_noise(&eps.batch_item(i)?, &eps.batch_item(n + i)?, scale)?;
            *x = if model.config.clip_x0 {
                let x0 = model.schedule.predict_x0(x, &guided, t)?;
                let x0 = Tensor::from_fn(x0.shape(), |i| {
                    let (lo, hi) = bounds[i[1]];
                    x0.at(i).clamp(lo, hi)
                });
                mix(&x0, &guided, model.schedule.alpha_bar(t_prev)?)?
            } else {
                model.schedule.ddim_step(x, &guided, t, t_prev)?
            };
        }
    }
    Ok(xs)
}

/// `person` where `keep = 1`, `generated` elsewhere.
pub fn composite(person: &Image, generated: &Image, keep: &BinaryMask) -> Result<Image> {
    if person.dims() != generated.dims() || person.dims() != keep.dims() {
        return Err(Error::shape(
            "composite",
            &[person.height(), person.width()],
            &[keep.height(), keep.width()],
        ));
    }
    let mut out = person.clone();
    for y in 0..keep.height() {
        for x in 0..keep.width() {
            if keep.editable(y, x) {
                out.put(y, x, generated.get(y, x));
            }
        }
    }
    Ok(out)
}

/// One try-on request.
#[derive(Debug, Clone, Copy)]
pub struct TryOnRequest<'a> {
    pub person: &'a Image,
    pub garment: &'a Image,
    pub pose: PoseInputs<'a>,
    /// Fine mask; the bounding-box strategy derives its rectangle from it.
    pub keep: &'a BinaryMask,
    pub strategy: MaskStrategy,
    pub seed: u64,
}

fn effective_mask(keep: &BinaryMask, strategy: MaskStrategy) -> Result<BinaryMask> {
    match strategy {
        MaskStrategy::FineGrained => Ok(keep.clone()),
        MaskStrategy::BoundingBox => derive_bbox_mask(keep),
    }
}

/// Batched [`sample_tryon`]. Requests are processed in chunks of `chunk`.
pub fn sample_many(
    model: &TryOnModel,
    reqs: &[TryOnRequest<'_>],
    chunk: usize,
) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(reqs.len());
    for part in reqs.chunks(chunk.max(1)) {
        let mut pending = Vec::new();
        let mut results: Vec<Option<Image>> = vec![None; part.len()];
        for (i, r) in part.iter().enumerate() {
            if r.keep.editable_count() == 0 {
                results[i] = Some(r.person.clone());
                continue;
            }
            let keep = effective_mask(r.keep, r.strategy)?;
            let cond = model.condition(r.person, r.garment, r.pose, &keep)?;
            pending.push((i, keep, cond));
        }
        let conds: Vec<&CondLatents> = pending.iter().map(|(_, _, c)| c).collect();
        let seeds: Vec<u64> = pending.iter().map(|(i, _, _)| part[*i].seed).collect();
        let lats = sample_latents(model, &conds, &seeds)?;
        for ((i, keep, _), lat) in pending.iter().zip(lats) {
            let decoded = model.codec.decode(&Latent::new(LatentKind::Clean, lat)?)?;
            results[*i] = Some(composite(part[*i].person, &decoded, keep)?);
        }
        out.extend(results.into_iter().map(|r| r.expect("every slot filled")));
    }
    Ok(out)
}

/// Generates the try-on image for one request with the model's mode.
pub fn sample_tryon(
    model: &TryOnModel,
    mode: ConditioningMode,
    req: &TryOnRequest<'_>,
) -> Result<Image> {
    if mode != model.mode() {
        return Err(Error::contract(format!(
            "checkpoint was trained for `{}`, not `{mode}`",
            model.mode()
        )));
    }
    Ok(sample_many(model, std::slice::from_ref(req), 1)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::RunConfig;
    use crate::diffusion::unet::NetConfig;
    use crate::imaging::io::image_to_png;
    use crate::synthdata::{make_sample, sample_rng};

    fn model(mode: ConditioningMode) -> TryOnModel {
        let mut m = TryOnModel::new(RunConfig {
            mode,
            ddim_steps: 5,
            net: NetConfig {
                base_channels: 8,
                levels: 2,
                blocks_per_level: 1,
                groups: 4,
                time_freqs: 8,
                time_channels: 16,
            },
            ..RunConfig::default()
        })
        .unwrap();
        // Give the zero-initialized output layer some weight so samples vary.
        for (k, v) in m.net.params.iter_mut() {
            if k.starts_with("out.conv") {
                for (i, x) in v.data_mut().iter_mut().enumerate() {
                    *x = ((i * 37 % 11) as f32 - 5.0) * 0.01;
                }
            }
        }
        m
    }

    fn request<'a>(
        s: &'a crate::synthdata::SpriteSample,
        keep: &'a BinaryMask,
        seed: u64,
    ) -> TryOnRequest<'a> {
        TryOnRequest {
            person: &s.person,
            garment: &s.garment,
            pose: PoseInputs {
                skeleton: Some(&s.skeleton),
                pose_map: Some(&s.pose_map),
            },
            keep,
            strategy: MaskStrategy::FineGrained,
            seed,
        }
    }

    #[test]
    fn clipped_latents_stay_in_codec_range() {
        let mut m = model(ConditioningMode::PoseFree);
        let s = make_sample(&mut sample_rng(2, 0), 64, false).unwrap();
        let keep = derive_bbox_mask(&s.fine_mask).unwrap();
        let cond = m
            .condition(&s.person, &s.garment, PoseInputs::default(), &keep)
            .unwrap();
        let bounds = m.codec.latent_bounds();
        let outside = |x: &Tensor| {
            let [_, c, h, w] = x.shape();
            (0..c)
                .flat_map(|k| (0..h * w).map(move |i| (k, i / w, i % w)))
                .filter(|&(k, y, xx)| {
                    let v = x.at([0, k, y, xx]);
                    v < bounds[k].0 - 1e-6 || v > bounds[k].1 + 1e-6
                })
                .count()
        };
        let clipped = sample_latents(&m, &[&cond], &[5]).unwrap();
        assert_eq!(outside(&clipped[0]), 0);
        m.config.clip_x0 = false;
        let raw = sample_latents(&m, &[&cond], &[5]).unwrap();
        assert!(outside(&raw[0]) > 0);
    }

    #[test]
    fn same_seed_same_png() {
        let m = model(ConditioningMode::PoseStitchGray);
        let s = make_sample(&mut sample_rng(1, 0), 64, false).unwrap();
        let r = request(&s, &s.fine_mask, 42);
        let a = sample_tryon(&m, m.mode(), &r).unwrap();
        let b = sample_tryon(&m, m.mode(), &r).unwrap();
        assert_eq!(image_to_png(&a), image_to_png(&b));
        let c = sample_tryon(&m, m.mode(), &request(&s, &s.fine_mask, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn kept_pixels_are_untouched() {
        let m = model(ConditioningMode::JointsConcat);
        let s = make_sample(&mut sample_rng(1, 1), 64, false).unwrap();
        let out = sample_tryon(&m, m.mode(), &request(&s, &s.fine_mask, 1)).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if s.fine_mask.keep(y, x) {
                    assert_eq!(out.get(y, x), s.person.get(y, x));
                }
            }
        }
        let all_keep = BinaryMask::all_keep(64, 64);
        let out = sample_tryon(&m, m.mode(), &request(&s, &all_keep, 1)).unwrap();
        assert_eq!(out, s.person);
    }

    #[test]
    fn batched_matches_single() {
        let m = model(ConditioningMode::PoseFree);
        let s0 = make_sample(&mut sample_rng(2, 0), 64, false).unwrap();
        let s1 = make_sample(&mut sample_rng(2, 1), 64, false).unwrap();
        let reqs = [
            request(&s0, &s0.fine_mask, 5),
            request(&s1, &s1.bbox_mask, 6),
        ];
        let batched = sample_many(&m, &reqs, 8).unwrap();
        for (r, b) in reqs.iter().zip(&batched) {
            let single = sample_tryon(&m, m.mode(), r).unwrap();
            assert!(single.max_abs_diff(b).unwrap() < 1e-5);
        }
    }

    #[test]
    fn sampling_leaves_model_unchanged() {
        let m = model(ConditioningMode::PoseConcat);
        let before = m.net.clone();
        let s = make_sample(&mut sample_rng(3, 0), 64, false).unwrap();
        sample_tryon(&m, m.mode(), &request(&s, &s.fine_mask, 0)).unwrap();
        assert_eq!(m.net, before);
    }

    #[test]
    fn mode_mismatch_rejected() {
        let m = model(ConditioningMode::PoseFree);
        let s = make_sample(&mut sample_rng(3, 1), 64, false).unwrap();
        assert!(sample_tryon(
            &m,
            ConditioningMode::PoseConcat,
            &request(&s, &s.fine_mask, 0)
        )
        .is_err());
    }
}
