use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{silhouette, BinaryMask, Image, SILHOUETTE_LUMA};
use crate::latent_codec::Codec;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter over the valid region.
fn filter(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW)
                .map(|k| win[k] * plane[y * w + x + k])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW)
                .map(|k| win[k] * rows[(y + k) * ow + x])
                .sum();
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM on luma with an 11x11 Gaussian window (sigma 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            "ssim",
            &[a.height(), a.width()],
            &[b.height(), b.width()],
        ));
    }
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels"
        )));
    }
    let la: Vec<f64> = a.luma_plane().iter().map(|&v| v as f64).collect();
    let lb: Vec<f64> = b.luma_plane().iter().map(|&v| v as f64).collect();
    let win = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let (ma, _, _) = filter(&la, h, w, &win);
    let (mb, _, _) = filter(&lb, h, w, &win);
    let (saa, _, _) = filter(&prod(&la, &la), h, w, &win);
    let (sbb, _, _) = filter(&prod(&lb, &lb), h, w, &win);
    let (sab, oh, ow) = filter(&prod(&la, &lb), h, w, &win);
    let mut total = 0.0;
    for i in 0..oh * ow {
        let (mu_a, mu_b) = (ma[i], mb[i]);
        let va = saa[i] - mu_a * mu_a;
        let vb = sbb[i] - mu_b * mu_b;
        let cov = sab[i] - mu_a * mu_b;
        total += ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / (oh * ow) as f64)
}

/// Image -> fixed-length feature vector.
pub trait FeatureExtractor: Sync {
    fn features(&self, img: &Image) -> Result<Vec<f64>>;
}

/// Flattened codec latent.
#[derive(Debug, Clone, Copy, Default)]
pub struct CodecFeatures(pub Codec);

impl FeatureExtractor for CodecFeatures {
    fn features(&self, img: &Image) -> Result<Vec<f64>> {
        Ok(self
            .0
            .encode(img)?
            .tensor()
            .data()
            .iter()
            .map(|&v| v as f64)
            .collect())
    }
}

fn check_sets(real: &[Vec<f64>], fake: &[Vec<f64>], what: &str) -> Result<usize> {
    if real.len() < 2 || fake.len() < 2 {
        return Err(Error::Metric(format!(
            "{what} needs at least 2 vectors per set"
        )));
    }
    let d = real[0].len();
    if d == 0 || real.iter().chain(fake).any(|v| v.len() != d) {
        return Err(Error::Metric(format!(
            "{what} feature vectors differ in length"
        )));
    }
    if real.iter().chain(fake).flatten().any(|v| !v.is_finite()) {
        return Err(Error::Metric(format!(
            "{what} features contain non-finite values"
        )));
    }
    Ok(d)
}

fn mean_cov(set: &[Vec<f64>], d: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len();
    let mut mu = DVector::zeros(d);
    for v in set {
        mu += DVector::from_column_slice(v);
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for v in set {
        let c = DVector::from_column_slice(v) - &mu;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    (mu, cov)
}

/// FID value plus how much clamping the square root needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidDetail {
    pub value: f64,
    /// Eigenvalues below zero that were clamped, across both decompositions.
    pub clamped: usize,
    /// Most negative eigenvalue seen before clamping (0 if none).
    pub most_negative: f64,
}

fn sym_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let e = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Metric("eigendecomposition did not converge".into()))?;
    if e.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Metric(
            "ill-conditioned covariance: non-finite eigenvalues".into(),
        ));
    }
    Ok(e)
}

/// Frechet distance between Gaussian fits of the two sets.
pub fn fid_detail(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<FidDetail> {
    let d = check_sets(real, fake, "fid")?;
    let (mr, cr) = mean_cov(real, d);
    let (mf, cf) = mean_cov(fake, d);
    let mut clamped = 0;
    let mut most_negative = 0.0f64;
    let mut clamp = |v: f64| {
        if v < 0.0 {
            clamped += 1;
            most_negative = most_negative.min(v);
            0.0
        } else {
            v
        }
    };
    // sqrt(cr), then the symmetric product sqrt(cr) cf sqrt(cr), whose square
    // root has the same trace as sqrt(cr cf).
    let e = sym_eigen(cr.clone())?;
    let root = DVector::from_iterator(d, e.eigenvalues.iter().map(|&v| clamp(v).sqrt()));
    let sr = &e.eigenvectors * DMatrix::from_diagonal(&root) * e.eigenvectors.transpose();
    let prod = &sr * &cf * &sr;
    let e2 = sym_eigen(prod)?;
    let tr_sqrt: f64 = e2.eigenvalues.iter().map(|&v| clamp(v).sqrt()).sum();
    let diff = (&mr - &mf).norm_squared();
    let value = diff + cr.trace() + cf.trace() - 2.0 * tr_sqrt;
    if !value.is_finite() {
        return Err(Error::Metric("fid is not finite".into()));
    }
    Ok(FidDetail {
        value: value.max(0.0),
        clamped,
        most_negative,
    })
}

pub fn fid(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    Ok(fid_detail(real, fake)?.value)
}

pub const KID_SUBSETS: usize = 10;
pub const KID_SUBSET_SIZE: usize = 100;
pub const KID_SEED: u64 = 0x4b1d;

fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

/// Unbiased MMD^2 U-statistic over paired draws `(x_i, y_i)`.
fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]]) -> f64 {
    let m = x.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                total += poly_kernel(x[i], x[j]) + poly_kernel(y[i], y[j])
                    - poly_kernel(x[i], y[j])
                    - poly_kernel(x[j], y[i]);
            }
        }
    }
    total / (m * (m - 1)) as f64
}

/// Kernel inception distance (not yet scaled by 1000): mean unbiased MMD^2
/// over `KID_SUBSETS` subsets of size `min(100, n)`.
pub fn kid(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    kid_with(real, fake, KID_SUBSETS, KID_SUBSET_SIZE, KID_SEED)
}

pub fn kid_with(
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    subsets: usize,
    size: usize,
    seed: u64,
) -> Result<f64> {
    check_sets(real, fake, "kid")?;
    let m = size.min(real.len()).min(fake.len());
    let mut total = 0.0;
    for s in 0..subsets {
        // Identically seeded streams: equal-size sets are drawn at the same
        // positions, which keeps x_i and y_i paired.
        let mut rr = ChaCha8Rng::seed_from_u64(seed);
        rr.set_stream(s as u64);
        let mut rf = rr.clone();
        let xs: Vec<&[f64]> = sample(&mut rr, real.len(), m)
            .iter()
            .map(|i| real[i].as_slice())
            .collect();
        let ys: Vec<&[f64]> = sample(&mut rf, fake.len(), m)
            .iter()
            .map(|i| fake[i].as_slice())
            .collect();
        total += mmd2_unbiased(&xs, &ys);
    }
    Ok(total / subsets as f64)
}

/// IoU of the generated silhouette (luma < 0.95) and the target silhouette,
/// both restricted to the editable region of `edit_region`. Silhouette masks
/// mark the figure as editable (`0`).
pub fn pose_iou(
    generated: &Image,
    target_silhouette: &BinaryMask,
    edit_region: &BinaryMask,
) -> Result<f64> {
    let dims = generated.dims();
    if target_silhouette.dims() != dims || edit_region.dims() != dims {
        return Err(Error::shape(
            "pose_iou",
            &[dims.0, dims.1],
            &[target_silhouette.height(), target_silhouette.width()],
        ));
    }
    let gen = silhouette(generated, SILHOUETTE_LUMA);
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..dims.0 {
        for x in 0..dims.1 {
            if !edit_region.editable(y, x) {
                continue;
            }
            let (g, t) = (gen.editable(y, x), target_silhouette.editable(y, x));
            inter += (g && t) as usize;
            union += (g || t) as usize;
        }
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
