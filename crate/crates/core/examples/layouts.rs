//! Assembles the network input of one sample under every conditioning mode
//! and writes a plane mosaic per mode.
//!
//! cargo run --release --example layouts -- [out_dir]

use std::path::PathBuf;

use stitchvton::cli::latent_mosaic;
use stitchvton::conditioning::{build_condition_image, ConditioningMode, PoseInputs};
use stitchvton::diffusion::{initial_noise, RunConfig, TryOnModel};
use stitchvton::imaging::io::save_image;
use stitchvton::synthdata::{make_sample, sample_rng};

fn main() -> stitchvton::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "layouts".into()));
    std::fs::create_dir_all(&out).map_err(|e| stitchvton::Error::io(&out, e))?;
    let s = make_sample(&mut sample_rng(3, 0), 64, false)?;
    save_image(&s.person, &out.join("person.png"))?;

    for mode in ConditioningMode::ALL {
        let model = TryOnModel::new(RunConfig {
            mode,
            ..RunConfig::default()
        })?;
        let pose = PoseInputs {
            skeleton: mode.uses_skeleton().then_some(&s.skeleton),
            pose_map: mode.uses_pose_map().then_some(&s.pose_map),
        };
        // Pixel-space view: the masked person, with the pose stitched in or alongside.
        let imgs = build_condition_image(mode, &s.person, &s.bbox_mask, pose)?;
        save_image(&imgs.masked_person, &out.join(format!("{mode}_masked.png")))?;
        if let Some(side) = &imgs.side_pose {
            save_image(side, &out.join(format!("{mode}_side_pose.png")))?;
        }
        let cond = model.condition(&s.person, &s.garment, pose, &s.bbox_mask)?;
        let input = cond.stacked(mode, &initial_noise(0, 8, 8), false)?;
        save_image(
            &latent_mosaic(&input)?,
            &out.join(format!("{mode}_input.png")),
        )?;
        println!("{mode:<17} input {:?}", input.shape());
    }
    println!("wrote {}", out.display());
    Ok(())
}
