//! Dresses held-out figures with a trained checkpoint, under both mask
//! strategies, and writes person / result / truth strips.
//!
//! cargo run --release --example tryon -- model.svtn [count] [out_dir] [guidance]

use std::path::PathBuf;

use stitchvton::conditioning::{MaskStrategy, PoseInputs};
use stitchvton::diffusion::{sample_tryon, TryOnModel, TryOnRequest};
use stitchvton::evalmetrics::ssim;
use stitchvton::imaging::io::save_image;
use stitchvton::imaging::Image;
use stitchvton::synthdata::{make_sample, sample_rng};

fn strip(images: &[&Image]) -> stitchvton::Result<Image> {
    let (h, w) = images[0].dims();
    let mut out = Image::white(h, w * images.len())?;
    for (i, img) in images.iter().enumerate() {
        out.blit(img, 0, i * w);
    }
    Ok(out)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let ckpt = PathBuf::from(args.next().ok_or("usage: tryon <ckpt> [count] [out_dir]")?);
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "tryon".into()));
    std::fs::create_dir_all(&out)?;

    let mut model = TryOnModel::load(&ckpt)?;
    if let Some(scale) = args.next().and_then(|s| s.parse().ok()) {
        model.config.guidance.scale = scale;
    }
    let mode = model.mode();
    for i in 0..count {
        let s = make_sample(&mut sample_rng(777, i), model.config.image_size, false)?;
        let pose = PoseInputs {
            skeleton: mode.uses_skeleton().then_some(&s.skeleton),
            pose_map: mode.uses_pose_map().then_some(&s.pose_map),
        };
        let mut results = Vec::new();
        for strategy in [MaskStrategy::FineGrained, MaskStrategy::BoundingBox] {
            let req = TryOnRequest {
                person: &s.person,
                garment: &s.garment,
                pose,
                keep: &s.fine_mask,
                strategy,
                seed: i as u64,
            };
            let img = sample_tryon(&model, mode, &req)?;
            println!(
                "sample {i} {strategy:<13} ssim {:.4}",
                ssim(&img, &s.truth)?
            );
            results.push(img);
        }
        let row = strip(&[&s.person, &s.garment, &results[0], &results[1], &s.truth])?;
        save_image(&row, &out.join(format!("tryon_{i}.png")))?;
    }
    println!(
        "wrote {} (person | garment | fine | bbox | truth)",
        out.display()
    );
    Ok(())
}
