//! Mask utilities on a generated sample: fine mask, its bounding box, the
//! latent-resolution mask, and pose stitching.
//!
//! cargo run --release --example masks -- [out_dir]

use std::path::PathBuf;

use stitchvton::imaging::io::{save_image, save_mask};
use stitchvton::imaging::{
    colorize_pose_map, derive_bbox_mask, downsample_to_latent, stitch_pose_into_mask, to_grayscale,
};
use stitchvton::synthdata::{make_sample, sample_rng};

fn main() -> stitchvton::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "masks".into()));
    std::fs::create_dir_all(&out).map_err(|e| stitchvton::Error::io(&out, e))?;
    let s = make_sample(&mut sample_rng(5, 0), 64, false)?;

    let bbox = derive_bbox_mask(&s.fine_mask)?;
    let r = s.fine_mask.editable_bounds().expect("garment is visible");
    println!(
        "fine mask: {} editable px, bounds y {}..={} x {}..={}",
        s.fine_mask.editable_count(),
        r.y0,
        r.y1,
        r.x0,
        r.x1
    );
    println!("bbox mask: {} editable px", bbox.editable_count());
    for (name, m) in [("fine", &s.fine_mask), ("bbox", &bbox)] {
        let lat = downsample_to_latent(m)?;
        println!(
            "{name} at latent resolution: {} of {} cells editable",
            lat.editable_count(),
            64
        );
        save_mask(m, &out.join(format!("{name}.png")))?;
        save_mask(&lat, &out.join(format!("{name}_latent.png")))?;
    }

    let gray_pose = to_grayscale(&colorize_pose_map(&s.pose_map)?);
    let stitched = stitch_pose_into_mask(&s.person, &gray_pose, &bbox)?;
    save_image(&stitched, &out.join("stitched.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
