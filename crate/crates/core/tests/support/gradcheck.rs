//! Finite-difference gradient checks, shared by the gradcheck and acceptance
//! targets.
//!
//! Each op is re-implemented here in f64 by direct loops. Central differences
//! (h = 1e-3) over that reference are compared against the f32 tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stitchvton::numerics::{Graph, NodeId, Tensor, GROUP_NORM_EPS};

const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

/// `(case, relative error)` per checked input.
pub type Errors = Vec<(String, f64)>;

#[derive(Clone)]
struct Arr {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Arr {
    fn random(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }
    fn idx(&self, [n, c, h, w]: [usize; 4]) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }
    fn at(&self, i: [usize; 4]) -> f64 {
        self.data[self.idx(i)]
    }
    fn tensor(&self) -> Tensor {
        Tensor::new(self.shape, self.data.iter().map(|&v| v as f32).collect()).unwrap()
    }
    fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }
}

fn ref_conv(x: &Arr, w: &Arr, b: &Arr, stride: usize, pad: usize) -> Arr {
    let [n, c, h, wd] = x.shape;
    let [o, _, kh, kw] = w.shape;
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Arr::zeros([n, o, ho, wo]);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = b.data[oi];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at([ni, ci, iy as usize, ix as usize])
                                        * w.at([oi, ci, i, j]);
                                }
                            }
                        }
                    }
                    let k = out.idx([ni, oi, y, xx]);
                    out.data[k] = acc;
                }
            }
        }
    }
    out
}

fn ref_group_norm(x: &Arr, gamma: &Arr, beta: &Arr, groups: usize) -> Arr {
    let [n, c, h, w] = x.shape;
    let cg = c / groups;
    let mut out = x.clone();
    for ni in 0..n {
        for g in 0..groups {
            let idxs: Vec<[usize; 4]> = (g * cg..(g + 1) * cg)
                .flat_map(|ci| (0..h).flat_map(move |y| (0..w).map(move |xx| [ni, ci, y, xx])))
                .collect();
            let m = idxs.len() as f64;
            let mean = idxs.iter().map(|&i| x.at(i)).sum::<f64>() / m;
            let var = idxs.iter().map(|&i| (x.at(i) - mean).powi(2)).sum::<f64>() / m;
            for i in idxs {
                let k = x.idx(i);
                out.data[k] = (x.at(i) - mean) / (var + GROUP_NORM_EPS as f64).sqrt()
                    * gamma.data[i[1]]
                    + beta.data[i[1]];
            }
        }
    }
    out
}

fn ref_silu(x: &Arr) -> Arr {
    let mut o = x.clone();
    for v in &mut o.data {
        *v = *v / (1.0 + (-*v).exp());
    }
    o
}

fn ref_mse(a: &Arr, b: &Arr) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.data.len() as f64
}

/// Norm-wise relative error between analytic and numeric gradients.
fn rel_err(analytic: &Tensor, numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a as f64 - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic
        .data()
        .iter()
        .map(|&a| (a as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

/// Central differences of `f` with respect to input `which`.
fn numeric_grad(inputs: &[Arr], which: usize, f: &dyn Fn(&[Arr]) -> f64) -> Vec<f64> {
    let mut work = inputs.to_vec();
    (0..inputs[which].data.len())
        .map(|k| {
            let orig = work[which].data[k];
            work[which].data[k] = orig + H;
            let up = f(&work);
            work[which].data[k] = orig - H;
            let down = f(&work);
            work[which].data[k] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Builds the tape with every input as a variable, checks each gradient.
fn check(
    out: &mut Errors,
    label: &str,
    inputs: &[Arr],
    reference: &dyn Fn(&[Arr]) -> f64,
    build: &dyn Fn(&mut Graph, &[NodeId]) -> NodeId,
) {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|a| g.variable(a.tensor()).unwrap())
        .collect();
    let loss = build(&mut g, &ids);
    let lv = g.value(loss).item().unwrap() as f64;
    let lr = reference(inputs);
    assert!(
        (lv - lr).abs() <= 1e-4 * lr.abs().max(1.0),
        "{label}: forward {lv} vs reference {lr}"
    );
    let grads = g.backward(loss).unwrap();
    for (i, id) in ids.iter().enumerate() {
        let numeric = numeric_grad(inputs, i, reference);
        out.push((
            format!("{label} input {i}"),
            rel_err(grads.get(*id).unwrap(), &numeric),
        ));
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn conv2d_mse_1x2x4x4(out: &mut Errors) {
    let mut r = rng(11);
    let x = Arr::random(&mut r, [1, 2, 4, 4]);
    let w = Arr::random(&mut r, [3, 2, 3, 3]);
    let b = Arr::random(&mut r, [1, 3, 1, 1]);
    let t = Arr::random(&mut r, [1, 3, 4, 4]);
    check(
        out,
        "conv2d",
        &[x, w, b],
        &|a| ref_mse(&ref_conv(&a[0], &a[1], &a[2], 1, 1), &t),
        &|g, ids| {
            let y = g.conv2d(ids[0], ids[1], Some(ids[2]), 1, 1).unwrap();
            let tt = g.constant(t.tensor()).unwrap();
            g.mse(y, tt).unwrap()
        },
    );
}

pub fn conv2d_random_geometries(out: &mut Errors) {
    for seed in 0..6u64 {
        let mut r = rng(100 + seed);
        let n = r.random_range(1..3);
        let c = r.random_range(1..4);
        let o = r.random_range(1..4);
        let k = [1, 3][r.random_range(0..2)];
        let stride = r.random_range(1..3);
        let pad = if k == 3 { r.random_range(0..2) } else { 0 };
        let hh = r.random_range(3..7);
        let ww = r.random_range(3..7);
        let x = Arr::random(&mut r, [n, c, hh, ww]);
        let w = Arr::random(&mut r, [o, c, k, k]);
        let b = Arr::random(&mut r, [1, o, 1, 1]);
        let out_shape = ref_conv(&x, &w, &b, stride, pad).shape;
        let t = Arr::random(&mut r, out_shape);
        check(
            out,
            &format!("conv2d seed {seed}"),
            &[x, w, b],
            &|a| ref_mse(&ref_conv(&a[0], &a[1], &a[2], stride, pad), &t),
            &|g, ids| {
                let y = g.conv2d(ids[0], ids[1], Some(ids[2]), stride, pad).unwrap();
                let tt = g.constant(t.tensor()).unwrap();
                g.mse(y, tt).unwrap()
            },
        );
    }
}

pub fn group_norm_four_groups(out: &mut Errors) {
    for seed in 0..4u64 {
        let mut r = rng(200 + seed);
        let x = Arr::random(&mut r, [2, 8, 3, 2]);
        let mut gamma = Arr::random(&mut r, [1, 8, 1, 1]);
        for v in &mut gamma.data {
            *v += 1.0;
        }
        let beta = Arr::random(&mut r, [1, 8, 1, 1]);
        let t = Arr::random(&mut r, [2, 8, 3, 2]);
        check(
            out,
            "group_norm",
            &[x, gamma, beta],
            &|a| ref_mse(&ref_group_norm(&a[0], &a[1], &a[2], 4), &t),
            &|g, ids| {
                let y = g.group_norm(ids[0], ids[1], ids[2], 4).unwrap();
                let tt = g.constant(t.tensor()).unwrap();
                g.mse(y, tt).unwrap()
            },
        );
    }
}

pub fn silu_elementwise(out: &mut Errors) {
    let mut r = rng(300);
    let mut x = Arr::random(&mut r, [1, 3, 4, 4]);
    for v in &mut x.data {
        *v *= 4.0;
    }
    let t = Arr::random(&mut r, [1, 3, 4, 4]);
    check(
        out,
        "silu",
        &[x],
        &|a| ref_mse(&ref_silu(&a[0]), &t),
        &|g, ids| {
            let y = g.silu(ids[0]).unwrap();
            let tt = g.constant(t.tensor()).unwrap();
            g.mse(y, tt).unwrap()
        },
    );
}

pub fn resampling_ops(out: &mut Errors) {
    let mut r = rng(400);
    let x = Arr::random(&mut r, [2, 2, 4, 6]);
    let t_up = Arr::random(&mut r, [2, 2, 8, 12]);
    let t_down = Arr::random(&mut r, [2, 2, 2, 3]);
    check(
        out,
        "upsample",
        std::slice::from_ref(&x),
        &|a| {
            let mut up = Arr::zeros([2, 2, 8, 12]);
            for i in 0..up.data.len() {
                let w = i % 12;
                let h = (i / 12) % 8;
                let nc = i / 96;
                up.data[i] = a[0].data[nc * 24 + (h / 2) * 6 + w / 2];
            }
            ref_mse(&up, &t_up)
        },
        &|g, ids| {
            let y = g.upsample_nearest2x(ids[0]).unwrap();
            let tt = g.constant(t_up.tensor()).unwrap();
            g.mse(y, tt).unwrap()
        },
    );
    check(
        out,
        "avg_pool",
        &[x],
        &|a| {
            let mut d = Arr::zeros([2, 2, 2, 3]);
            for nc in 0..4 {
                for h in 0..2 {
                    for w in 0..3 {
                        let s = &a[0].data[nc * 24..];
                        d.data[nc * 6 + h * 3 + w] = 0.25
                            * (s[(2 * h) * 6 + 2 * w]
                                + s[(2 * h) * 6 + 2 * w + 1]
                                + s[(2 * h + 1) * 6 + 2 * w]
                                + s[(2 * h + 1) * 6 + 2 * w + 1]);
                    }
                }
            }
            ref_mse(&d, &t_down)
        },
        &|g, ids| {
            let y = g.avg_pool2x(ids[0]).unwrap();
            let tt = g.constant(t_down.tensor()).unwrap();
            g.mse(y, tt).unwrap()
        },
    );
}

pub fn add_broadcast_concat_slice_sum(out: &mut Errors) {
    let mut r = rng(500);
    let a = Arr::random(&mut r, [2, 3, 2, 4]);
    let b = Arr::random(&mut r, [2, 3, 2, 4]);
    let bias = Arr::random(&mut r, [2, 3, 1, 1]);
    let extra = Arr::random(&mut r, [2, 1, 2, 4]);
    let t = Arr::random(&mut r, [2, 4, 2, 3]);
    // sum over slice(concat([a + b + bias, extra]), cols 1..4) compared by mse,
    // plus the plain sum of `a` to exercise the reduction.
    let reference = |x: &[Arr]| {
        let mut cat = Arr::zeros([2, 4, 2, 4]);
        for n in 0..2 {
            for c in 0..4 {
                for h in 0..2 {
                    for w in 0..4 {
                        let v = if c < 3 {
                            x[0].at([n, c, h, w]) + x[1].at([n, c, h, w]) + x[2].at([n, c, 0, 0])
                        } else {
                            x[3].at([n, 0, h, w])
                        };
                        let k = cat.idx([n, c, h, w]);
                        cat.data[k] = v;
                    }
                }
            }
        }
        let mut sl = Arr::zeros([2, 4, 2, 3]);
        for i in 0..sl.data.len() {
            let w = i % 3;
            sl.data[i] = cat.data[(i / 3) * 4 + w + 1];
        }
        ref_mse(&sl, &t) + x[0].data.iter().sum::<f64>()
    };
    check(
        out,
        "composite",
        &[a, b, bias, extra],
        &reference,
        &|g, ids| {
            let s = g.add(ids[0], ids[1]).unwrap();
            let s = g.add_broadcast(s, ids[2]).unwrap();
            let cat = g.concat_channels(&[s, ids[3]]).unwrap();
            let sl = g.slice_width(cat, 1, 3).unwrap();
            let tt = g.constant(t.tensor()).unwrap();
            let m = g.mse(sl, tt).unwrap();
            let total = g.sum(ids[0]).unwrap();
            g.add(m, total).unwrap()
        },
    );
}

pub fn small_resblock_chain(out: &mut Errors) {
    // Two channels per group so the per-channel time bias survives normalization.
    // GN -> SiLU -> conv -> +time bias -> GN -> SiLU -> conv, plus residual.
    let mut r = rng(600);
    let x = Arr::random(&mut r, [2, 8, 4, 4]);
    let w1 = Arr::random(&mut r, [8, 8, 3, 3]);
    let w2 = Arr::random(&mut r, [8, 8, 3, 3]);
    let tb = Arr::random(&mut r, [2, 8, 1, 1]);
    let ones = Arr {
        shape: [1, 8, 1, 1],
        data: vec![1.0; 8],
    };
    let zeros = Arr::zeros([1, 8, 1, 1]);
    let t = Arr::random(&mut r, [2, 8, 4, 4]);
    let (o2, z2, t2) = (ones.clone(), zeros.clone(), t.clone());
    let reference = move |a: &[Arr]| {
        let zb = Arr::zeros([1, 8, 1, 1]);
        let h = ref_silu(&ref_group_norm(&a[0], &o2, &z2, 4));
        let mut h = ref_conv(&h, &a[1], &zb, 1, 1);
        for i in 0..h.data.len() {
            let nc = i / 16;
            h.data[i] += a[3].data[nc];
        }
        let h = ref_silu(&ref_group_norm(&h, &o2, &z2, 4));
        let mut h = ref_conv(&h, &a[2], &zb, 1, 1);
        for (v, x) in h.data.iter_mut().zip(&a[0].data) {
            *v += x;
        }
        ref_mse(&h, &t2)
    };
    check(out, "resblock", &[x, w1, w2, tb], &reference, &|g, ids| {
        let gm = g.constant(ones.tensor()).unwrap();
        let bt = g.constant(zeros.tensor()).unwrap();
        let h = g.group_norm(ids[0], gm, bt, 4).unwrap();
        let h = g.silu(h).unwrap();
        let h = g.conv2d(h, ids[1], None, 1, 1).unwrap();
        let h = g.add_broadcast(h, ids[3]).unwrap();
        let h = g.group_norm(h, gm, bt, 4).unwrap();
        let h = g.silu(h).unwrap();
        let h = g.conv2d(h, ids[2], None, 1, 1).unwrap();
        let h = g.add(h, ids[0]).unwrap();
        let tt = g.constant(t.tensor()).unwrap();
        g.mse(h, tt).unwrap()
    });
}

pub const CASES: [(&str, fn(&mut Errors)); 7] = [
    ("conv2d", conv2d_mse_1x2x4x4),
    ("conv2d geometries", conv2d_random_geometries),
    ("group_norm", group_norm_four_groups),
    ("silu", silu_elementwise),
    ("resampling", resampling_ops),
    (
        "add/broadcast/concat/slice/sum",
        add_broadcast_concat_slice_sum,
    ),
    ("resblock chain", small_resblock_chain),
];

/// Every case, flattened.
pub fn all() -> Errors {
    let mut out = Vec::new();
    for (_, f) in CASES {
        f(&mut out);
    }
    out
}
