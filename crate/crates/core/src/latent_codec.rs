//! Fixed analytic image codec with the `3xHxW -> 4x(H/8)x(W/8)` shape contract.
//!
//! Each 8x8 luma patch is projected onto four orthogonal basis functions: the
//! constant, the lowest horizontal cosine, the lowest vertical cosine, and
//! their product. Coefficients are multiplied by per-channel scales so the
//! latent channels have roughly unit spread on the sprite corpus.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, PATCH};
use crate::numerics::Tensor;

pub const LATENT_CHANNELS: usize = 4;

/// Which conditioning plane a latent encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentKind {
    Masked,
    Garment,
    Pose,
    Noisy,
    Clean,
}

/// A `(1, 4, H/8, W/8)` latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub kind: LatentKind,
    tensor: Tensor,
}

impl Latent {
    pub fn new(kind: LatentKind, tensor: Tensor) -> Result<Self> {
        let [n, c, _, _] = tensor.shape();
        if n != 1 || c != LATENT_CHANNELS {
            return Err(Error::shape(
                "latent",
                &tensor.shape(),
                &[1, LATENT_CHANNELS],
            ));
        }
        if !tensor.is_finite() {
            return Err(Error::NonFinite("latent"));
        }
        Ok(Self { kind, tensor })
    }

    pub fn zeros(kind: LatentKind, h: usize, w: usize) -> Self {
        Self {
            kind,
            tensor: Tensor::zeros([1, LATENT_CHANNELS, h, w]),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    /// Latent spatial dims `(H/8, W/8)`.
    pub fn dims(&self) -> (usize, usize) {
        let [_, _, h, w] = self.tensor.shape();
        (h, w)
    }

    pub fn with_kind(mut self, kind: LatentKind) -> Self {
        self.kind = kind;
        self
    }
}

/// Codec scaling constants, recorded in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Multipliers for `[mean, horizontal, vertical, diagonal]` coefficients.
    pub scales: [f32; LATENT_CHANNELS],
}

impl Default for CodecConfig {
    /// Inverse standard deviations of each coefficient, measured over 2000
    /// generated 64x64 sprite samples (person, garment, and truth images).
    fn default() -> Self {
        Self {
            scales: DEFAULT_SCALES,
        }
    }
}

pub const DEFAULT_SCALES: [f32; LATENT_CHANNELS] = [6.6896, 9.6372, 17.4506, 15.7436];

/// `cos(pi * (2n + 1) / 16)` for `n` in `0..8`.
fn first_cosine() -> [f64; PATCH] {
    let mut c = [0.0; PATCH];
    for (n, v) in c.iter_mut().enumerate() {
        *v = (PI * (2 * n + 1) as f64 / (2 * PATCH) as f64).cos();
    }
    c
}

/// Basis function `k` evaluated at `(y, x)` within a patch.
fn basis(k: usize, y: usize, x: usize, c1: &[f64; PATCH]) -> f64 {
    match k {
        0 => 1.0,
        1 => c1[x],
        2 => c1[y],
        _ => c1[y] * c1[x],
    }
}

/// Raw (unscaled) coefficients of every patch: `[k][cell]`.
pub fn patch_coefficients(img: &Image) -> Result<Vec<[f64; LATENT_CHANNELS]>> {
    let (h, w) = img.dims();
    if h % PATCH != 0 || w % PATCH != 0 {
        return Err(Error::shape("encode", &[h, w], &[PATCH, PATCH]));
    }
    let c1 = first_cosine();
    let norms: [f64; LATENT_CHANNELS] = std::array::from_fn(|k| {
        (0..PATCH)
            .flat_map(|y| (0..PATCH).map(move |x| (y, x)))
            .map(|(y, x)| basis(k, y, x, &c1).powi(2))
            .sum()
    });
    let l = img.luma_plane();
    let (lh, lw) = (h / PATCH, w / PATCH);
    let mut out = Vec::with_capacity(lh * lw);
    for cy in 0..lh {
        for cx in 0..lw {
            let mut acc = [0.0f64; LATENT_CHANNELS];
            for y in 0..PATCH {
                for x in 0..PATCH {
                    let p = l[(cy * PATCH + y) * w + cx * PATCH + x] as f64;
                    for (k, a) in acc.iter_mut().enumerate() {
                        *a += p * basis(k, y, x, &c1);
                    }
                }
            }
            for k in 0..LATENT_CHANNELS {
                acc[k] /= norms[k];
            }
            out.push(acc);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Codec {
    pub config: CodecConfig,
}

impl Codec {
    pub fn new(config: CodecConfig) -> Self {
        Self { config }
    }

    pub fn encode(&self, img: &Image) -> Result<Latent> {
        self.encode_as(img, LatentKind::Clean)
    }

    pub fn encode_as(&self, img: &Image, kind: LatentKind) -> Result<Latent> {
        let coeffs = patch_coefficients(img)?;
        let (lh, lw) = (img.height() / PATCH, img.width() / PATCH);
        let s = self.config.scales;
        let t = Tensor::from_fn([1, LATENT_CHANNELS, lh, lw], |[_, k, y, x]| {
            (coeffs[y * lw + x][k] * s[k] as f64) as f32
        });
        Latent::new(kind, t)
    }

    /// Per-channel `(min, max)` over all latents of images with luma in `[0, 1]`.
    pub fn latent_bounds(&self) -> [(f32, f32); LATENT_CHANNELS] {
        let c1 = first_cosine();
        std::array::from_fn(|k| {
            let (mut lo, mut hi, mut norm) = (0.0, 0.0, 0.0);
            for y in 0..PATCH {
                for x in 0..PATCH {
                    let b = basis(k, y, x, &c1);
                    lo += b.min(0.0);
                    hi += b.max(0.0);
                    norm += b * b;
                }
            }
            let s = self.config.scales[k] as f64;
            ((lo / norm * s) as f32, (hi / norm * s) as f32)
        })
    }

    /// Synthesis without clamping; linear in the latent.
    pub fn decode_luma(&self, lat: &Latent) -> Vec<f32> {
        let (lh, lw) = lat.dims();
        let (h, w) = (lh * PATCH, lw * PATCH);
        let c1 = first_cosine();
        let s = self.config.scales;
        let t = lat.tensor();
        let mut out = vec![0.0f32; h * w];
        for cy in 0..lh {
            for cx in 0..lw {
                let a: [f64; LATENT_CHANNELS] =
                    std::array::from_fn(|k| t.at([0, k, cy, cx]) as f64 / s[k] as f64);
                for y in 0..PATCH {
                    for x in 0..PATCH {
                        let v: f64 = (0..LATENT_CHANNELS)
                            .map(|k| a[k] * basis(k, y, x, &c1))
                            .sum();
                        out[(cy * PATCH + y) * w + cx * PATCH + x] = v as f32;
                    }
                }
            }
        }
        out
    }

    /// Inverse of the truncated transform, clamped to `[0, 1]`, gray RGB.
    pub fn decode(&self, lat: &Latent) -> Result<Image> {
        let (lh, lw) = lat.dims();
        let l = self.decode_luma(lat);
        let mut data = Vec::with_capacity(3 * l.len());
        for _ in 0..3 {
            data.extend(l.iter().map(|v| v.clamp(0.0, 1.0)));
        }
        Image::new(lh * PATCH, lw * PATCH, data)
    }
}
