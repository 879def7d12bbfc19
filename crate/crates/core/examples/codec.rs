//! Encodes generated sprites, reports per-channel coefficient spread and the
//! round-trip error, and writes one original/decoded pair as PNG.
//!
//! cargo run --example codec -- 2000 /tmp/codec

use std::path::PathBuf;

use stitchvton::imaging::io::save_image;
use stitchvton::latent_codec::{patch_coefficients, Codec, LATENT_CHANNELS};
use stitchvton::synthdata::{make_sample, sample_rng};

fn main() -> stitchvton::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "codec_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| stitchvton::Error::io(&out, e))?;

    let codec = Codec::default();
    let mut sum = [0f64; LATENT_CHANNELS];
    let mut sq = [0f64; LATENT_CHANNELS];
    let mut count = 0f64;
    let mut err = 0f64;
    for i in 0..n {
        let s = make_sample(&mut sample_rng(0, i), 64, false)?;
        for img in [&s.person, &s.garment, &s.truth] {
            for c in patch_coefficients(img)? {
                for k in 0..LATENT_CHANNELS {
                    sum[k] += c[k];
                    sq[k] += c[k] * c[k];
                }
                count += 1.0;
            }
        }
        let back = codec.decode(&codec.encode(&s.truth)?)?;
        let l = s.truth.luma_plane();
        let b = back.luma_plane();
        err += l
            .iter()
            .zip(&b)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / l.len() as f64;
        if i == 0 {
            save_image(&s.truth, &out.join("original.png"))?;
            save_image(&back, &out.join("decoded.png"))?;
        }
    }
    for k in 0..LATENT_CHANNELS {
        let mean = sum[k] / count;
        let std = (sq[k] / count - mean * mean).sqrt();
        println!(
            "channel {k}: mean {mean:.5} std {std:.5} inverse {:.4}",
            1.0 / std
        );
    }
    println!("mean abs luma round-trip error {:.4}", err / n as f64);
    Ok(())
}
