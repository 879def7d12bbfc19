//! The noise schedule and the DDIM ladder: prints alpha-bar along the ladder
//! and checks that stepping with the true noise returns the clean latent.
//!
//! cargo run --release --example ddim_schedule -- [ddim_steps]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stitchvton::diffusion::{randn, NoiseSchedule, ScheduleConfig};

fn main() -> stitchvton::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(25);
    let s = NoiseSchedule::linear(&ScheduleConfig::default())?;
    let ladder = s.ddim_ladder(n)?;
    println!("{:>5} {:>5} {:>12}", "t", "prev", "alpha_bar(t)");
    for &(t, tp) in &ladder {
        println!("{t:5} {tp:5} {:12.6}", s.alpha_bar(t)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = randn(&mut rng, [1, 4, 8, 8]);
    let eps = randn(&mut rng, [1, 4, 8, 8]);
    let mut x = s.forward_diffuse(&x0, s.steps(), &eps)?;
    for &(t, tp) in &ladder {
        x = s.ddim_step(&x, &eps, t, tp)?;
    }
    println!("oracle-noise ladder error: {:.2e}", x.max_abs_diff(&x0)?);
    Ok(())
}
