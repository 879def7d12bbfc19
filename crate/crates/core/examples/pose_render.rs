//! Renders a random figure's skeleton (color and gray) and its part map.
//!
//! cargo run --release --example pose_render -- [seed] [size]

use std::path::Path;

use stitchvton::imaging::io::save_image;
use stitchvton::imaging::{colorize_pose_map, rasterize_skeleton, BodyPart};
use stitchvton::synthdata::{make_sample, sample_rng};

fn main() -> stitchvton::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let size: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(128);
    let s = make_sample(&mut sample_rng(seed, 0), size, false)?;

    println!("{} of 18 joints visible", s.skeleton.visible_count());
    println!("{}", s.skeleton.to_json());
    for part in [BodyPart::Head, BodyPart::Torso] {
        println!("{part:?}: {} px", s.pose_map.count(part));
    }
    println!(
        "background {:.1}%",
        100.0 * s.pose_map.background_fraction()
    );

    save_image(&s.person, Path::new("pose_person.png"))?;
    save_image(
        &rasterize_skeleton(&s.skeleton, size, size, true)?,
        Path::new("pose_skeleton.png"),
    )?;
    save_image(
        &rasterize_skeleton(&s.skeleton, size, size, false)?,
        Path::new("pose_skeleton_gray.png"),
    )?;
    save_image(&colorize_pose_map(&s.pose_map)?, Path::new("pose_map.png"))?;
    println!("wrote pose_*.png");
    Ok(())
}
