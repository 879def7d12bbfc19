//! Generates a small sprite corpus and prints its manifest summary.
//!
//! cargo run --example gen_data -- /tmp/sprites 40

use std::path::PathBuf;

use stitchvton::synthdata::{generate_dataset, DatasetConfig, Split};

fn main() -> stitchvton::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "sprites".into()));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let cfg = DatasetConfig {
        pose_transfer: true,
        ..DatasetConfig::default()
    };
    let m = generate_dataset(n, 0, &out, &cfg)?;
    println!(
        "{} samples in {} ({} train, {} test)",
        m.samples.len(),
        out.display(),
        m.count(Split::Train),
        m.count(Split::Test)
    );
    Ok(())
}
