//! What the metrics can reach at all: scores the codec round trip of the
//! ground truth, and a blank white fill, under the evaluation protocol.
//!
//! cargo run --release --example metric_ceiling -- [n]

use stitchvton::diffusion::composite;
use stitchvton::evalmetrics::{pose_iou, ssim};
use stitchvton::imaging::{silhouette, Image, SILHOUETTE_LUMA};
use stitchvton::latent_codec::Codec;
use stitchvton::synthdata::{make_sample, sample_rng};

fn main() -> stitchvton::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let codec = Codec::default();
    let white = Image::white(64, 64)?;
    let mut sums = [0f64; 4];
    for i in 0..n {
        let s = make_sample(&mut sample_rng(12345, i), 64, false)?;
        let round_trip = codec.decode(&codec.encode(&s.truth)?)?;
        let sil = silhouette(&s.truth, SILHOUETTE_LUMA);
        for (k, fill) in [&round_trip, &white].into_iter().enumerate() {
            sums[2 * k] += ssim(&composite(&s.person, fill, &s.fine_mask)?, &s.truth)?;
            sums[2 * k + 1] += pose_iou(
                &composite(&s.person, fill, &s.bbox_mask)?,
                &sil,
                &s.bbox_mask,
            )?;
        }
    }
    let m = sums.map(|v| v / n as f64);
    println!("codec round trip: ssim {:.4}  pose_iou {:.4}", m[0], m[1]);
    println!("white fill:       ssim {:.4}  pose_iou {:.4}", m[2], m[3]);
    Ok(())
}
