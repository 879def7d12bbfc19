//! Image-quality and pose-adherence metrics, and the per-mode evaluation run.

mod metrics;

pub use metrics::{
    fid, fid_detail, kid, kid_with, pose_iou, ssim, CodecFeatures, FeatureExtractor, FidDetail,
    KID_SEED, KID_SUBSETS, KID_SUBSET_SIZE, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW,
};

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditioningMode, MaskStrategy, PoseInputs};
use crate::diffusion::{sample_many, TryOnModel, TryOnRequest};
use crate::error::{Error, Result};
use crate::imaging::io::write_bytes;
use crate::imaging::{derive_bbox_mask, silhouette, Image, SILHOUETTE_LUMA};
use crate::synthdata::{pose_transfer_mask, SpriteSample};

pub const REPORT_SCHEMA: u32 = 1;
/// Requests sampled together per DDIM ladder.
pub const EVAL_CHUNK: usize = 16;

/// Summary for one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: ConditioningMode,
    pub ssim_mean: f64,
    pub fid: f64,
    pub kid_x1000: f64,
    pub pose_iou_mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: u32,
    pub modes: Vec<ModeReport>,
}

impl EvalReport {
    pub fn new(modes: Vec<ModeReport>) -> Self {
        Self {
            schema: REPORT_SCHEMA,
            modes,
        }
    }

    pub fn get(&self, mode: ConditioningMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,ssim_mean,fid,kid_x1000,pose_iou_mean,n\n");
        for m in &self.modes {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{}",
                m.mode, m.ssim_mean, m.fid, m.kid_x1000, m.pose_iou_mean, m.n
            );
        }
        s
    }

    /// Writes `path` (JSON) and the same path with a `.csv` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        write_bytes(path, json.as_bytes())?;
        write_bytes(&path.with_extension("csv"), self.to_csv().as_bytes())
    }
}

fn pose_for<'a>(mode: ConditioningMode, s: &'a SpriteSample) -> PoseInputs<'a> {
    PoseInputs {
        skeleton: mode.uses_skeleton().then_some(&s.skeleton),
        pose_map: mode.uses_pose_map().then_some(&s.pose_map),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Outputs of one evaluation pass, kept for inspection.
#[derive(Debug, Clone)]
pub struct EvalOutputs {
    pub report: ModeReport,
    /// Fine-mask try-on results, one per sample.
    pub fine: Vec<Image>,
    /// Bounding-box results, one per sample.
    pub bbox: Vec<Image>,
}

/// Evaluates a model on held-out samples.
///
/// SSIM, FID and KID use the fine-mask result against the ground truth.
/// Pose IoU uses the bounding-box result, where the mask no longer reveals
/// the figure's outline, scored inside the box against the truth silhouette.
pub fn evaluate(
    model: &TryOnModel,
    samples: &[SpriteSample],
    features: &dyn FeatureExtractor,
    seed: u64,
) -> Result<EvalOutputs> {
    if samples.len() < 2 {
        return Err(Error::Metric("evaluation needs at least 2 samples".into()));
    }
    let mode = model.mode();
    let run = |strategy: MaskStrategy| -> Result<Vec<Image>> {
        let reqs: Vec<TryOnRequest<'_>> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| TryOnRequest {
                person: &s.person,
                garment: &s.garment,
                pose: pose_for(mode, s),
                keep: &s.fine_mask,
                strategy,
                seed: seed.wrapping_add(i as u64),
            })
            .collect();
        sample_many(model, &reqs, EVAL_CHUNK)
    };
    let fine = run(MaskStrategy::FineGrained)?;
    let bbox = run(MaskStrategy::BoundingBox)?;

    let ssims: Vec<f64> = fine
        .par_iter()
        .zip(samples)
        .map(|(g, s)| ssim(g, &s.truth))
        .collect::<Result<_>>()?;
    let ious: Vec<f64> = bbox
        .par_iter()
        .zip(samples)
        .map(|(g, s)| pose_iou(g, &silhouette(&s.truth, SILHOUETTE_LUMA), &s.bbox_mask))
        .collect::<Result<_>>()?;
    let real: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| features.features(&s.truth))
        .collect::<Result<_>>()?;
    let fake: Vec<Vec<f64>> = fine
        .par_iter()
        .map(|g| features.features(g))
        .collect::<Result<_>>()?;

    Ok(EvalOutputs {
        report: ModeReport {
            mode,
            ssim_mean: mean(&ssims),
            fid: fid(&real, &fake)?,
            kid_x1000: 1000.0 * kid(&real, &fake)?,
            pose_iou_mean: mean(&ious),
            n: samples.len(),
        },
        fine,
        bbox,
    })
}

/// Mean pose IoU when repainting each sample into its target pose. The edit
/// region is the bounding box of the pose-transfer mask. Samples without a
/// target are skipped; returns `None` if none have one.
pub fn pose_transfer_iou(
    model: &TryOnModel,
    samples: &[SpriteSample],
    seed: u64,
) -> Result<Option<f64>> {
    let mode = model.mode();
    let mut masks = Vec::new();
    let mut picked = Vec::new();
    for s in samples {
        if let Some(m) = pose_transfer_mask(s) {
            masks.push(derive_bbox_mask(&m)?);
            picked.push(s);
        }
    }
    if picked.is_empty() {
        return Ok(None);
    }
    let reqs: Vec<TryOnRequest<'_>> = picked
        .iter()
        .zip(&masks)
        .enumerate()
        .map(|(i, (s, m))| {
            let t = s.target.as_ref().expect("filtered");
            TryOnRequest {
                person: &s.person,
                garment: &s.garment,
                pose: PoseInputs {
                    skeleton: mode.uses_skeleton().then_some(&t.skeleton),
                    pose_map: mode.uses_pose_map().then_some(&t.pose_map),
                },
                keep: m,
                strategy: MaskStrategy::FineGrained,
                seed: seed.wrapping_add(i as u64),
            }
        })
        .collect();
    let out = sample_many(model, &reqs, EVAL_CHUNK)?;
    let ious: Vec<f64> = out
        .iter()
        .zip(&picked)
        .zip(&masks)
        .map(|((g, s), m)| {
            let t = s.target.as_ref().expect("filtered");
            pose_iou(g, &silhouette(&t.truth, SILHOUETTE_LUMA), m)
        })
        .collect::<Result<_>>()?;
    Ok(Some(mean(&ious)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{NetConfig, RunConfig};
    use crate::synthdata::{make_sample, sample_rng};

    fn tiny(mode: ConditioningMode) -> TryOnModel {
        TryOnModel::new(RunConfig {
            mode,
            ddim_steps: 2,
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
        .unwrap()
    }

    #[test]
    fn report_round_trips_and_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let r = EvalReport::new(vec![ModeReport {
            mode: ConditioningMode::PoseFree,
            ssim_mean: 0.5,
            fid: 1.0,
            kid_x1000: 2.0,
            pose_iou_mean: 0.25,
            n: 3,
        }]);
        let p = dir.path().join("r.json");
        r.save(&p).unwrap();
        let back: EvalReport = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("pose-free,0.5"));
    }

    #[test]
    fn evaluate_produces_finite_report() {
        let samples: Vec<SpriteSample> = (0..3)
            .map(|i| make_sample(&mut sample_rng(4, i), 64, true).unwrap())
            .collect();
        let m = tiny(ConditioningMode::JointsStitch);
        let out = evaluate(&m, &samples, &CodecFeatures::default(), 0).unwrap();
        let r = &out.report;
        assert_eq!(r.n, 3);
        assert!(r.ssim_mean.is_finite() && r.fid.is_finite() && r.kid_x1000.is_finite());
        assert!((0.0..=1.0).contains(&r.pose_iou_mean));
        let iou = pose_transfer_iou(&m, &samples, 0).unwrap().unwrap();
        assert!((0.0..=1.0).contains(&iou));
        assert!(evaluate(&m, &samples[..1], &CodecFeatures::default(), 0).is_err());
    }
}
