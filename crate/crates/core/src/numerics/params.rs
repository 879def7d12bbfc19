use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::Tensor;

/// Named trainable tensors in a stable (sorted) order.
pub type ParamStore = BTreeMap<String, Tensor>;

/// Kaiming-uniform (fan-in, ReLU gain) conv weight of shape `(out, in, k, k)`.
pub fn kaiming_uniform(rng: &mut impl Rng, out_ch: usize, in_ch: usize, k: usize) -> Tensor {
    let fan_in = (in_ch * k * k) as f32;
    let bound = (6.0 / fan_in).sqrt();
    let mut t = Tensor::zeros([out_ch, in_ch, k, k]);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

pub fn param_count(params: &ParamStore) -> usize {
    params.values().map(Tensor::numel).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kaiming_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = kaiming_uniform(&mut rng, 16, 8, 3);
        let bound = (6.0f32 / 72.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(w.data().iter().any(|v| v.abs() > 0.5 * bound));
    }
}
