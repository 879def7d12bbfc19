//! Raw forward/backward kernels. The tape in [`super::graph`] owns bookkeeping;
//! these functions only move numbers.

use crate::error::{Error, Result};

use super::tensor::Tensor;

pub const GROUP_NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: [usize; 4], weight: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [n, c, h, w] = input;
        let [o, wc, kh, kw] = weight;
        if wc != c {
            return Err(Error::shape("conv2d", &input, &weight));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d stride must be >= 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape("conv2d", &input, &weight));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        })
    }

    #[inline]
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    #[inline]
    fn p(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds the input into a `[C*kh*kw, N*Ho*Wo]` matrix.
fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let (k, p) = (g.k(), g.p());
    let np = g.n * p;
    let mut cols = vec![0.0f32; k * np];
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * np..(row + 1) * np];
                for ni in 0..g.n {
                    let src = &x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let base = ni * p + oy * g.wo;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f32], g: &ConvGeom) -> Vec<f32> {
    let (p, np) = (g.p(), g.n * g.p());
    let mut x = vec![0.0f32; g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * np..(row + 1) * np];
                for ni in 0..g.n {
                    let plane = (ni * g.c + ci) * g.h * g.w;
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = ni * p + oy * g.wo;
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                x[plane + iy as usize * g.w + ix as usize] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `c = a * b` with explicit strides; `c` is overwritten.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides and extents describe regions inside the given slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug)]
pub(crate) struct ConvSaved {
    pub geom: ConvGeom,
    pub cols: Vec<f32>,
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, ConvSaved)> {
    let g = ConvGeom::new(x.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.numel() != g.o {
            return Err(Error::shape("conv2d bias", &weight.shape(), &b.shape()));
        }
    }
    let (k, p) = (g.k(), g.p());
    let np = g.n * p;
    let cols = im2col(x.data(), &g);
    let mut out_mat = vec![0.0f32; g.o * np];
    gemm(
        g.o,
        k,
        np,
        weight.data(),
        k as isize,
        1,
        &cols,
        np as isize,
        1,
        &mut out_mat,
    );
    let mut out = vec![0.0f32; g.n * g.o * p];
    for oi in 0..g.o {
        let b = bias.map_or(0.0, |b| b.data()[oi]);
        for ni in 0..g.n {
            let src = &out_mat[oi * np + ni * p..oi * np + (ni + 1) * p];
            let dst = &mut out[(ni * g.o + oi) * p..(ni * g.o + oi + 1) * p];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    let out = Tensor::new([g.n, g.o, g.ho, g.wo], out)?;
    Ok((out, ConvSaved { geom: g, cols }))
}

/// Returns `(d_input, d_weight, d_bias)`.
pub(crate) fn conv2d_backward(
    saved: &ConvSaved,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = &saved.geom;
    let (k, p) = (g.k(), g.p());
    let np = g.n * p;
    // [N, O, P] -> [O, N*P]
    let mut dy = vec![0.0f32; g.o * np];
    let go = grad_out.data();
    for ni in 0..g.n {
        for oi in 0..g.o {
            dy[oi * np + ni * p..oi * np + (ni + 1) * p]
                .copy_from_slice(&go[(ni * g.o + oi) * p..(ni * g.o + oi + 1) * p]);
        }
    }
    let mut dw = vec![0.0f32; g.o * k];
    gemm(
        g.o,
        np,
        k,
        &dy,
        np as isize,
        1,
        &saved.cols,
        1,
        np as isize,
        &mut dw,
    );
    let mut dcols = vec![0.0f32; k * np];
    gemm(
        k,
        g.o,
        np,
        weight.data(),
        1,
        k as isize,
        &dy,
        np as isize,
        1,
        &mut dcols,
    );
    let dx = col2im(&dcols, g);
    let db: Vec<f32> = (0..g.o)
        .map(|oi| dy[oi * np..(oi + 1) * np].iter().sum())
        .collect();
    Ok((
        Tensor::new([g.n, g.c, g.h, g.w], dx)?,
        Tensor::new(weight.shape(), dw)?,
        Tensor::new([1, g.o, 1, 1], db)?,
    ))
}

pub(crate) fn upsample_nearest2x(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    Tensor::from_fn([n, c, 2 * h, 2 * w], |[ni, ci, y, xx]| {
        x.at([ni, ci, y / 2, xx / 2])
    })
}

pub(crate) fn upsample_nearest2x_backward(grad: &Tensor) -> Tensor {
    let [n, c, h2, w2] = grad.shape();
    let mut out = Tensor::zeros([n, c, h2 / 2, w2 / 2]);
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let i = out.index([ni, ci, y / 2, xx / 2]);
                    out.data_mut()[i] += grad.at([ni, ci, y, xx]);
                }
            }
        }
    }
    out
}

pub(crate) fn avg_pool2x(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("avg_pool2x", &x.shape(), &[2, 2]));
    }
    Ok(Tensor::from_fn([n, c, h / 2, w / 2], |[ni, ci, y, xx]| {
        0.25 * (x.at([ni, ci, 2 * y, 2 * xx])
            + x.at([ni, ci, 2 * y, 2 * xx + 1])
            + x.at([ni, ci, 2 * y + 1, 2 * xx])
            + x.at([ni, ci, 2 * y + 1, 2 * xx + 1]))
    }))
}

pub(crate) fn avg_pool2x_backward(grad: &Tensor) -> Tensor {
    let [n, c, h, w] = grad.shape();
    Tensor::from_fn([n, c, 2 * h, 2 * w], |[ni, ci, y, xx]| {
        0.25 * grad.at([ni, ci, y / 2, xx / 2])
    })
}

pub(crate) struct GroupNormSaved {
    pub groups: usize,
    /// Normalized input, same shape as the input.
    pub xhat: Tensor,
    /// `1/sqrt(var + eps)` per (sample, group).
    pub rstd: Vec<f32>,
}

pub(crate) fn group_norm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    groups: usize,
) -> Result<(Tensor, GroupNormSaved)> {
    let [n, c, h, w] = x.shape();
    if groups == 0 || c % groups != 0 {
        return Err(Error::shape("group_norm", &x.shape(), &[groups]));
    }
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::shape(
            "group_norm affine",
            &x.shape(),
            &gamma.shape(),
        ));
    }
    let cg = c / groups;
    let m = cg * h * w;
    let mut xhat = vec![0.0f32; x.numel()];
    let mut out = vec![0.0f32; x.numel()];
    let mut rstd = Vec::with_capacity(n * groups);
    let xd = x.data();
    for ni in 0..n {
        for gi in 0..groups {
            let start = (ni * c + gi * cg) * h * w;
            let slab = &xd[start..start + m];
            let mean = slab.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
            let var = slab
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / m as f64;
            let r = (1.0 / (var + GROUP_NORM_EPS as f64).sqrt()) as f32;
            rstd.push(r);
            for (j, &v) in slab.iter().enumerate() {
                let ch = gi * cg + j / (h * w);
                let xh = (v - mean as f32) * r;
                xhat[start + j] = xh;
                out[start + j] = xh * gamma.data()[ch] + beta.data()[ch];
            }
        }
    }
    Ok((
        Tensor::new(x.shape(), out)?,
        GroupNormSaved {
            groups,
            xhat: Tensor::new(x.shape(), xhat)?,
            rstd,
        },
    ))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub(crate) fn group_norm_backward(
    saved: &GroupNormSaved,
    gamma: &Tensor,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, c, h, w] = grad.shape();
    let groups = saved.groups;
    let cg = c / groups;
    let hw = h * w;
    let m = cg * hw;
    let xhat = saved.xhat.data();
    let gd = grad.data();
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    let mut dx = vec![0.0f32; grad.numel()];
    for ni in 0..n {
        for gi in 0..groups {
            let start = (ni * c + gi * cg) * hw;
            let mut sum_d = 0.0f64;
            let mut sum_dx = 0.0f64;
            for j in 0..m {
                let ch = gi * cg + j / hw;
                let dy = gd[start + j];
                dgamma[ch] += dy * xhat[start + j];
                dbeta[ch] += dy;
                let dxh = (dy * gamma.data()[ch]) as f64;
                sum_d += dxh;
                sum_dx += dxh * xhat[start + j] as f64;
            }
            let r = saved.rstd[ni * groups + gi] as f64;
            let mf = m as f64;
            for j in 0..m {
                let ch = gi * cg + j / hw;
                let dxh = (gd[start + j] * gamma.data()[ch]) as f64;
                let xh = xhat[start + j] as f64;
                dx[start + j] = (r / mf * (mf * dxh - sum_d - xh * sum_dx)) as f32;
            }
        }
    }
    Ok((
        Tensor::new(grad.shape(), dx)?,
        Tensor::new(gamma.shape(), dgamma)?,
        Tensor::new(gamma.shape(), dbeta)?,
    ))
}

#[inline]
fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub(crate) fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid(v))
}

pub(crate) fn silu_backward(x: &Tensor, grad: &Tensor) -> Result<Tensor> {
    x.zip_map(grad, |v, g| {
        let s = sigmoid(v);
        g * (s + v * s * (1.0 - s))
    })
}

/// Adds a `(N, C, 1, 1)` (or `(1, C, 1, 1)`) tensor to every spatial location.
pub(crate) fn add_broadcast(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    let [bn, bc, bh, bw] = b.shape();
    if bc != c || bh != 1 || bw != 1 || (bn != n && bn != 1) {
        return Err(Error::shape("add_broadcast", &x.shape(), &b.shape()));
    }
    let mut out = x.clone();
    let hw = h * w;
    for ni in 0..n {
        for ci in 0..c {
            let v = b.data()[(if bn == 1 { 0 } else { ni }) * c + ci];
            for o in &mut out.data_mut()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                *o += v;
            }
        }
    }
    Ok(out)
}

pub(crate) fn add_broadcast_backward(grad: &Tensor, b_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = grad.shape();
    let hw = h * w;
    let mut out = Tensor::zeros(b_shape);
    let bn = b_shape[0];
    for ni in 0..n {
        for ci in 0..c {
            let s: f32 = grad.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw]
                .iter()
                .sum();
            out.data_mut()[(if bn == 1 { 0 } else { ni }) * c + ci] += s;
        }
    }
    out
}

pub(crate) fn mse(a: &Tensor, b: &Tensor) -> Result<f32> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse", &a.shape(), &b.shape()));
    }
    let n = a.numel() as f64;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum();
    Ok((s / n) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel_returns_input() {
        let x = Tensor::new([1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let w = Tensor::full([1, 1, 1, 1], 1.0);
        let (y, _) = conv2d_forward(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let x = Tensor::zeros([2, 3, 5, 5]);
        let w = Tensor::from_fn([2, 3, 3, 3], |[o, c, i, j]| (o + c + i + j) as f32 * 0.1);
        let b = Tensor::new([1, 2, 1, 1], vec![0.5, -2.0]).unwrap();
        let (y, _) = conv2d_forward(&x, &w, Some(&b), 1, 1).unwrap();
        assert_eq!(y.shape(), [2, 2, 5, 5]);
        for n in 0..2 {
            for h in 0..5 {
                for w in 0..5 {
                    assert_eq!(y.at([n, 0, h, w]), 0.5);
                    assert_eq!(y.at([n, 1, h, w]), -2.0);
                }
            }
        }
    }

    #[test]
    fn conv_hand_cross_correlation() {
        let x = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (y, _) = conv2d_forward(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv_output_dims_follow_floor_rule() {
        let x = Tensor::zeros([1, 2, 7, 6]);
        let w = Tensor::zeros([4, 2, 3, 3]);
        let (y, _) = conv2d_forward(&x, &w, None, 2, 1).unwrap();
        // floor((7 + 2 - 3)/2) + 1 = 4, floor((6 + 2 - 3)/2) + 1 = 3
        assert_eq!(y.shape(), [1, 4, 4, 3]);
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let x = Tensor::zeros([1, 3, 4, 4]);
        let w = Tensor::zeros([1, 2, 3, 3]);
        match conv2d_forward(&x, &w, None, 1, 1) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![1, 3, 4, 4]);
                assert_eq!(rhs, vec![1, 2, 3, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn conv_matches_direct_loop() {
        let x = Tensor::from_fn([2, 3, 5, 4], |[n, c, h, w]| {
            ((n * 7 + c * 5 + h * 3 + w) % 11) as f32 - 5.0
        });
        let wt = Tensor::from_fn([4, 3, 3, 3], |[o, c, i, j]| {
            ((o * 3 + c * 2 + i + j * 5) % 7) as f32 * 0.25 - 0.5
        });
        let (y, _) = conv2d_forward(&x, &wt, None, 2, 1).unwrap();
        let [_, _, ho, wo] = y.shape();
        for n in 0..2 {
            for o in 0..4 {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..3 {
                            for i in 0..3 {
                                for j in 0..3 {
                                    let iy = (oy * 2 + i) as isize - 1;
                                    let ix = (ox * 2 + j) as isize - 1;
                                    if (0..5).contains(&iy) && (0..4).contains(&ix) {
                                        acc += x.at([n, c, iy as usize, ix as usize])
                                            * wt.at([o, c, i, j]);
                                    }
                                }
                            }
                        }
                        assert!((y.at([n, o, oy, ox]) - acc).abs() < 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn avg_pool_rejects_odd_dims() {
        assert!(avg_pool2x(&Tensor::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn group_norm_output_is_normalized() {
        let x = Tensor::from_fn([2, 8, 3, 3], |[n, c, h, w]| (n * 3 + c * 2 + h * w) as f32);
        let gamma = Tensor::full([1, 8, 1, 1], 1.0);
        let beta = Tensor::zeros([1, 8, 1, 1]);
        let (y, _) = group_norm_forward(&x, &gamma, &beta, 4).unwrap();
        for n in 0..2 {
            for g in 0..4 {
                let vals: Vec<f32> = (0..2)
                    .flat_map(|c| (0..9).map(move |j| (g * 2 + c, j)))
                    .map(|(c, j)| y.at([n, c, j / 3, j % 3]))
                    .collect();
                let mean: f32 = vals.iter().sum::<f32>() / 18.0;
                let var: f32 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 18.0;
                assert!(mean.abs() < 1e-5);
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }
}
