//! Scores a checkpoint on freshly generated samples, optionally at several
//! guidance scales.
//!
//! cargo run --release --example eval_metrics -- model.svtn [n] [scale...]

use std::path::PathBuf;

use stitchvton::diffusion::TryOnModel;
use stitchvton::evalmetrics::{evaluate, CodecFeatures};
use stitchvton::imaging::io::save_image;
use stitchvton::synthdata::{make_sample, sample_rng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let ckpt = PathBuf::from(
        args.next()
            .ok_or("usage: eval_metrics <ckpt> [n] [scale...]")?,
    );
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let mut scales: Vec<f32> = args.filter_map(|s| s.parse().ok()).collect();

    let mut model = TryOnModel::load(&ckpt)?;
    if scales.is_empty() {
        scales.push(model.config.guidance.scale);
    }
    let size = model.config.image_size;
    let samples: Vec<_> = (0..n)
        .map(|i| make_sample(&mut sample_rng(12345, i), size, false))
        .collect::<Result<_, _>>()?;
    println!("mode {} on {n} samples", model.mode());
    println!("scale    ssim     fid      kid_x1000  pose_iou");
    for s in scales {
        model.config.guidance.scale = s;
        let out = evaluate(&model, &samples, &CodecFeatures(model.codec), 0)?;
        let r = &out.report;
        println!(
            "{s:5.2}  {:.4}  {:8.3}  {:9.3}  {:.4}",
            r.ssim_mean, r.fid, r.kid_x1000, r.pose_iou_mean
        );
        save_image(&out.bbox[0], &PathBuf::from(format!("eval_bbox_{s}.png")))?;
    }
    Ok(())
}
