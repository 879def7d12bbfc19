//! Fits a two-layer conv net to a fixed target with the tape autodiff and
//! Adam, printing the loss as it falls.
//!
//! cargo run --release --example autodiff

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stitchvton::numerics::{kaiming_uniform, AdamConfig, AdamState, Graph, ParamStore, Tensor};

fn main() -> stitchvton::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn([4, 2, 8, 8], |[n, c, y, x]| {
        ((n + 2 * c + y * x) % 5) as f32 / 4.0
    });
    // Target: a smoothed difference of the two input channels.
    let target = Tensor::from_fn([4, 1, 8, 8], |[n, _, y, xx]| {
        x.at([n, 0, y, xx]) - 0.5 * x.at([n, 1, y, xx])
    });

    let mut params = ParamStore::new();
    params.insert("c1.weight".into(), kaiming_uniform(&mut rng, 8, 2, 3));
    params.insert("c1.bias".into(), Tensor::zeros([1, 8, 1, 1]));
    params.insert("c2.weight".into(), kaiming_uniform(&mut rng, 1, 8, 3));
    params.insert("c2.bias".into(), Tensor::zeros([1, 1, 1, 1]));
    let mut adam = AdamState::new(AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    });

    for step in 1..=300 {
        let mut g = Graph::new();
        let xi = g.constant(x.clone())?;
        let tt = g.constant(target.clone())?;
        let (w1, b1) = (
            g.param("c1.weight", &params["c1.weight"])?,
            g.param("c1.bias", &params["c1.bias"])?,
        );
        let (w2, b2) = (
            g.param("c2.weight", &params["c2.weight"])?,
            g.param("c2.bias", &params["c2.bias"])?,
        );
        let h = g.conv2d(xi, w1, Some(b1), 1, 1)?;
        let h = g.silu(h)?;
        let y = g.conv2d(h, w2, Some(b2), 1, 1)?;
        let loss = g.mse(y, tt)?;
        let value = g.value(loss).item()?;
        let mut grads = g.backward(loss)?;
        let grads = g.param_grads(&mut grads);
        adam.step(&mut params, &grads)?;
        if step == 1 || step % 50 == 0 {
            println!("step {step:3} loss {value:.6}");
        }
    }
    Ok(())
}
