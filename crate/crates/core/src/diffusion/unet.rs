//! Small convolutional UNet predicting noise on the stacked latent canvas.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::INPUT_CHANNELS;
use crate::error::{Error, Result};
use crate::latent_codec::LATENT_CHANNELS;
use crate::numerics::{kaiming_uniform, param_count, Graph, NodeId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Channels at the finest level; doubled per level.
    pub base_channels: usize,
    pub levels: usize,
    pub blocks_per_level: usize,
    pub groups: usize,
    /// Sinusoidal embedding width.
    pub time_freqs: usize,
    pub time_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            levels: 3,
            blocks_per_level: 2,
            groups: 4,
            time_freqs: 32,
            time_channels: 128,
        }
    }
}

impl NetConfig {
    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Latent dims must survive `levels - 1` halvings.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let f = 1 << (self.levels - 1);
        if !h.is_multiple_of(f) || !w.is_multiple_of(f) || h == 0 || w == 0 {
            return Err(Error::shape("denoiser input", &[h, w], &[f, f]));
        }
        Ok(())
    }
}

/// Sinusoidal embedding `[sin(t f_i), cos(t f_i)]`, `f_i = 10000^(-i/half)`,
/// as an `(N, dim, 1, 1)` tensor.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    Tensor::from_fn([ts.len(), dim, 1, 1], |[n, c, _, _]| {
        let i = c % half;
        let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = ts[n] as f64 * f;
        (if c < half { a.sin() } else { a.cos() }) as f32
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    pub config: NetConfig,
    pub params: ParamStore,
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    params: ParamStore,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, out: usize, inp: usize, k: usize) {
        self.params
            .insert(format!("{name}.w"), kaiming_uniform(self.rng, out, inp, k));
        self.params
            .insert(format!("{name}.b"), Tensor::zeros([1, out, 1, 1]));
    }

    fn norm(&mut self, name: &str, c: usize) {
        self.params
            .insert(format!("{name}.gamma"), Tensor::full([1, c, 1, 1], 1.0));
        self.params
            .insert(format!("{name}.beta"), Tensor::zeros([1, c, 1, 1]));
    }

    fn resblock(&mut self, name: &str, inp: usize, out: usize, tc: usize) {
        self.norm(&format!("{name}.norm1"), inp);
        self.conv(&format!("{name}.conv1"), out, inp, 3);
        self.conv(&format!("{name}.time"), out, tc, 1);
        self.norm(&format!("{name}.norm2"), out);
        self.conv(&format!("{name}.conv2"), out, out, 3);
        if inp != out {
            self.conv(&format!("{name}.skip"), out, inp, 1);
        }
    }
}

/// Channel plan shared by init and forward: `(name, in, out)` per block.
fn down_blocks(cfg: &NetConfig) -> Vec<Vec<(String, usize, usize)>> {
    let mut prev = cfg.base_channels;
    (0..cfg.levels)
        .map(|l| {
            (0..cfg.blocks_per_level)
                .map(|b| {
                    let inp = prev;
                    prev = cfg.channels(l);
                    (format!("down{l}.res{b}"), inp, prev)
                })
                .collect()
        })
        .collect()
}

fn up_blocks(cfg: &NetConfig) -> Vec<Vec<(String, usize, usize)>> {
    (0..cfg.levels - 1)
        .rev()
        .map(|l| {
            (0..cfg.blocks_per_level)
                .map(|b| {
                    let inp = if b == 0 {
                        cfg.channels(l + 1) + cfg.channels(l)
                    } else {
                        cfg.channels(l)
                    };
                    (format!("up{l}.res{b}"), inp, cfg.channels(l))
                })
                .collect()
        })
        .collect()
}

impl DenoiserNet {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        if config.levels == 0
            || config.blocks_per_level == 0
            || config.time_freqs < 2
            || !config.time_freqs.is_multiple_of(2)
            || !config.base_channels.is_multiple_of(config.groups)
        {
            return Err(Error::contract(format!("invalid net config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            rng: &mut rng,
            params: ParamStore::new(),
        };
        let tc = config.time_channels;
        b.conv("time.fc1", tc, config.time_freqs, 1);
        b.conv("time.fc2", tc, tc, 1);
        b.conv("conv_in", config.base_channels, INPUT_CHANNELS, 3);
        for level in down_blocks(&config).iter().chain(&up_blocks(&config)) {
            for (name, inp, out) in level {
                b.resblock(name, *inp, *out, tc);
            }
        }
        b.norm("out.norm", config.base_channels);
        b.conv("out.conv", LATENT_CHANNELS, config.base_channels, 3);
        // Zero output layer: the untrained net predicts eps_hat = 0.
        for k in ["out.conv.w", "out.conv.b"] {
            let t = b.params.get_mut(k).expect("just inserted");
            t.data_mut().fill(0.0);
        }
        Ok(Self {
            params: b.params,
            config,
        })
    }

    pub fn from_params(config: NetConfig, params: ParamStore) -> Result<Self> {
        let fresh = Self::new(config, 0)?;
        for (k, v) in &fresh.params {
            match params.get(k) {
                Some(p) if p.shape() == v.shape() => {}
                Some(p) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter `{k}` has shape {:?}, expected {:?}",
                        p.shape(),
                        v.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter `{k}`"))),
            }
        }
        if let Some(k) = params.keys().find(|k| !fresh.params.contains_key(*k)) {
            return Err(Error::Checkpoint(format!("unexpected parameter `{k}`")));
        }
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.params)
    }

    fn p(&self, g: &mut Graph, name: &str) -> Result<NodeId> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        g.param(name, t)
    }

    fn conv(&self, g: &mut Graph, name: &str, x: NodeId, pad: usize) -> Result<NodeId> {
        let w = self.p(g, &format!("{name}.w"))?;
        let b = self.p(g, &format!("{name}.b"))?;
        g.conv2d(x, w, Some(b), 1, pad)
    }

    fn norm_act(&self, g: &mut Graph, name: &str, x: NodeId) -> Result<NodeId> {
        let gamma = self.p(g, &format!("{name}.gamma"))?;
        let beta = self.p(g, &format!("{name}.beta"))?;
        let n = g.group_norm(x, gamma, beta, self.config.groups)?;
        g.silu(n)
    }

    fn resblock(
        &self,
        g: &mut Graph,
        name: &str,
        x: NodeId,
        temb: NodeId,
        project: bool,
    ) -> Result<NodeId> {
        let h = self.norm_act(g, &format!("{name}.norm1"), x)?;
        let h = self.conv(g, &format!("{name}.conv1"), h, 1)?;
        let tproj = self.conv(g, &format!("{name}.time"), temb, 0)?;
        let h = g.add_broadcast(h, tproj)?;
        let h = self.norm_act(g, &format!("{name}.norm2"), h)?;
        let h = self.conv(g, &format!("{name}.conv2"), h, 1)?;
        let skip = if project {
            self.conv(g, &format!("{name}.skip"), x, 0)?
        } else {
            x
        };
        g.add(h, skip)
    }

    /// Records the forward pass on `g`. `x` is `(N, 9, h, W)`, `ts` has one
    /// timestep per batch item; returns the `(N, 4, h, W)` noise estimate.
    pub fn forward(&self, g: &mut Graph, x: NodeId, ts: &[usize]) -> Result<NodeId> {
        let [n, c, h, w] = g.value(x).shape();
        if c != INPUT_CHANNELS || ts.len() != n {
            return Err(Error::shape(
                "denoiser input",
                &g.value(x).shape(),
                &[ts.len(), INPUT_CHANNELS],
            ));
        }
        self.config.check_input(h, w)?;
        let emb = g.constant(timestep_embedding(ts, self.config.time_freqs))?;
        let t = self.conv(g, "time.fc1", emb, 0)?;
        let t = g.silu(t)?;
        let t = self.conv(g, "time.fc2", t, 0)?;
        let temb = g.silu(t)?;

        let mut hcur = self.conv(g, "conv_in", x, 1)?;
        let mut skips = Vec::new();
        let down = down_blocks(&self.config);
        for (l, level) in down.iter().enumerate() {
            for (name, inp, out) in level {
                hcur = self.resblock(g, name, hcur, temb, inp != out)?;
            }
            if l + 1 < self.config.levels {
                skips.push(hcur);
                hcur = g.avg_pool2x(hcur)?;
            }
        }
        for level in up_blocks(&self.config) {
            hcur = g.upsample_nearest2x(hcur)?;
            let skip = skips.pop().expect("one skip per upsampling");
            hcur = g.concat_channels(&[hcur, skip])?;
            for (name, inp, out) in &level {
                hcur = self.resblock(g, name, hcur, temb, inp != out)?;
            }
        }
        let hcur = self.norm_act(g, "out.norm", hcur)?;
        self.conv(g, "out.conv", hcur, 1)
    }

    /// Inference-only forward.
    pub fn predict(&self, x: &Tensor, ts: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let xi = g.constant(x.clone())?;
        let out = self.forward(&mut g, xi, ts)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::ConditioningMode;

    fn tiny() -> NetConfig {
        NetConfig {
            base_channels: 8,
            levels: 2,
            blocks_per_level: 1,
            groups: 4,
            time_freqs: 8,
            time_channels: 16,
        }
    }

    #[test]
    fn embedding_at_zero() {
        let e = timestep_embedding(&[0], 8);
        for c in 0..4 {
            assert_eq!(e.at([0, c, 0, 0]), 0.0);
            assert_eq!(e.at([0, c + 4, 0, 0]), 1.0);
        }
        let e = timestep_embedding(&[7], 8);
        assert!((e.at([0, 0, 0, 0]) - 7f32.sin()).abs() < 1e-6);
    }

    #[test]
    fn output_matches_input_dims() {
        let net = DenoiserNet::new(tiny(), 1).unwrap();
        for mode in ConditioningMode::ALL {
            let w = 4 * mode.width_multiplier();
            let x = Tensor::full([2, INPUT_CHANNELS, 4, w], 0.1);
            assert_eq!(net.predict(&x, &[3, 900]).unwrap().shape(), [2, 4, 4, w]);
        }
    }

    #[test]
    fn untrained_net_predicts_zero() {
        let net = DenoiserNet::new(tiny(), 1).unwrap();
        let x = Tensor::full([1, INPUT_CHANNELS, 4, 8], 0.3);
        assert!(net
            .predict(&x, &[10])
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn every_parameter_is_used_for_every_mode() {
        let net = DenoiserNet::new(NetConfig::default(), 2).unwrap();
        for mode in ConditioningMode::ALL {
            let mut g = Graph::new();
            let x = g
                .constant(Tensor::zeros([
                    1,
                    INPUT_CHANNELS,
                    8,
                    8 * mode.width_multiplier(),
                ]))
                .unwrap();
            net.forward(&mut g, x, &[1]).unwrap();
            let used: usize = g.param_ids().keys().map(|k| net.params[k].numel()).sum();
            assert_eq!(used, net.param_count());
        }
    }

    #[test]
    fn bad_geometry_rejected() {
        let net = DenoiserNet::new(NetConfig::default(), 2).unwrap();
        assert!(net
            .predict(&Tensor::zeros([1, INPUT_CHANNELS, 6, 16]), &[1])
            .is_err());
        assert!(net.predict(&Tensor::zeros([1, 4, 8, 16]), &[1]).is_err());
        assert!(net
            .predict(&Tensor::zeros([2, INPUT_CHANNELS, 8, 16]), &[1])
            .is_err());
    }

    #[test]
    fn params_roundtrip_and_validation() {
        let net = DenoiserNet::new(tiny(), 3).unwrap();
        let again = DenoiserNet::from_params(tiny(), net.params.clone()).unwrap();
        assert_eq!(again, net);
        let mut broken = net.params.clone();
        broken.remove("conv_in.w");
        assert!(DenoiserNet::from_params(tiny(), broken).is_err());
    }
}
