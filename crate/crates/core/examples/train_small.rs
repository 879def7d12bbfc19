//! Trains a denoiser on freshly generated sprites and saves a checkpoint.
//!
//! cargo run --release --example train_small -- pose-stitch-gray 300 /tmp/model.svtn [lr]

use std::path::PathBuf;
use std::time::Instant;

use stitchvton::conditioning::ConditioningMode;
use stitchvton::diffusion::{prepare_all, RunConfig, Trainer, TryOnModel};
use stitchvton::synthdata::{make_sample, sample_rng};

fn main() -> stitchvton::Result<()> {
    let mut args = std::env::args().skip(1);
    let mode: ConditioningMode = args
        .next()
        .unwrap_or_else(|| "pose-stitch-gray".into())
        .parse()?;
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "model.svtn".into()));
    let mut config = RunConfig {
        mode,
        steps,
        ..RunConfig::default()
    };
    if let Some(lr) = args.next().and_then(|s| s.parse().ok()) {
        config.adam.lr = lr;
    }

    let samples: Vec<_> = (0..200)
        .map(|i| make_sample(&mut sample_rng(0, i), 64, false))
        .collect::<Result<_, _>>()?;
    let model = TryOnModel::new(config)?;
    println!("{mode}: {} parameters", model.net.param_count());
    let data = prepare_all(&model, &samples)?;
    let mut trainer = Trainer::new(model, data)?;
    let start = Instant::now();
    trainer.run(steps, |step, loss| {
        if step % 100 == 0 || step == 1 {
            println!(
                "step {step:5} loss {loss:.4} ({:.2}s)",
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    let window = |a: usize, b: usize| {
        let l = &trainer.losses[a.min(steps)..b.min(steps)];
        l.iter().sum::<f32>() / l.len().max(1) as f32
    };
    println!(
        "mean loss: first 100 {:.4}, last 100 {:.4}",
        window(0, 100),
        window(steps.saturating_sub(100), steps)
    );
    trainer.into_model().save(&out)?;
    println!("saved {}", out.display());
    Ok(())
}
