use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense rank-4 tensor in NCHW order with row-major `f32` storage.
///
/// Convolution weights reuse the same layout as `(out, in, kh, kw)`; biases and
/// per-channel affine parameters are `(1, C, 1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        data.push(f([ni, ci, hi, wi]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, [n, c, h, w]: [usize; 4]) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + h) * ws + w
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> f32 {
        self.data[self.index(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: f32) {
        let i = self.index(idx);
        self.data[i] = v;
    }

    /// Returns the single value of a one-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("zip_map", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let [n, _, h, w] = first.shape;
        for p in parts {
            let [pn, _, ph, pw] = p.shape;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape("concat_channels", &first.shape, &p.shape));
            }
        }
        let c_total: usize = parts.iter().map(|p| p.shape[1]).sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * c_total * plane);
        for ni in 0..n {
            for p in parts {
                let c = p.shape[1];
                data.extend_from_slice(&p.data[ni * c * plane..(ni + 1) * c * plane]);
            }
        }
        Ok(Self {
            shape: [n, c_total, h, w],
            data,
        })
    }

    /// Concatenates along the width axis.
    pub fn concat_width(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let [n, c, h, _] = first.shape;
        for p in parts {
            let [pn, pc, ph, _] = p.shape;
            if (pn, pc, ph) != (n, c, h) {
                return Err(Error::shape("concat_width", &first.shape, &p.shape));
            }
        }
        let w_total: usize = parts.iter().map(|p| p.shape[3]).sum();
        let mut data = Vec::with_capacity(n * c * h * w_total);
        for row in 0..n * c * h {
            for p in parts {
                let w = p.shape[3];
                data.extend_from_slice(&p.data[row * w..(row + 1) * w]);
            }
        }
        Ok(Self {
            shape: [n, c, h, w_total],
            data,
        })
    }

    /// Concatenates along the batch axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.shape[1..] != [c, h, w] {
                return Err(Error::shape("concat_batch", &first.shape, &p.shape));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: [n, c, h, w],
            data,
        })
    }

    /// Columns `[start, start + len)` of every row.
    pub fn slice_width(&self, start: usize, len: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape;
        if start + len > w {
            return Err(Error::shape("slice_width", &self.shape, &[start, len]));
        }
        let mut data = Vec::with_capacity(n * c * h * len);
        for row in 0..n * c * h {
            data.extend_from_slice(&self.data[row * w + start..row * w + start + len]);
        }
        Ok(Self {
            shape: [n, c, h, len],
            data,
        })
    }

    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape;
        if start + len > c {
            return Err(Error::shape("slice_channels", &self.shape, &[start, len]));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for ni in 0..n {
            let base = (ni * c + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Self {
            shape: [n, len, h, w],
            data,
        })
    }

    /// One batch element as a `(1, C, H, W)` tensor.
    pub fn batch_item(&self, i: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape;
        if i >= n {
            return Err(Error::shape("batch_item", &self.shape, &[i]));
        }
        let len = c * h * w;
        Ok(Self {
            shape: [1, c, h, w],
            data: self.data[i * len..(i + 1) * len].to_vec(),
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new([1, 2, 2, 2], vec![0.0; 7]).is_err());
    }

    #[test]
    fn width_concat_then_slice_recovers_parts() {
        let a = Tensor::from_fn([2, 3, 2, 4], |[n, c, h, w]| {
            (n * 100 + c * 10 + h * 4 + w) as f32
        });
        let b = Tensor::full([2, 3, 2, 5], -1.0);
        let cat = Tensor::concat_width(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), [2, 3, 2, 9]);
        assert_eq!(cat.slice_width(0, 4).unwrap(), a);
        assert_eq!(cat.slice_width(4, 5).unwrap(), b);
    }

    #[test]
    fn channel_concat_then_slice_recovers_parts() {
        let a = Tensor::from_fn([2, 1, 3, 3], |[n, _, h, w]| (n * 9 + h * 3 + w) as f32);
        let b = Tensor::from_fn([2, 2, 3, 3], |[n, c, h, w]| {
            -((n * 18 + c * 9 + h * 3 + w) as f32)
        });
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.slice_channels(0, 1).unwrap(), a);
        assert_eq!(cat.slice_channels(1, 2).unwrap(), b);
    }

    #[test]
    fn concat_rejects_mismatched_heights() {
        let a = Tensor::zeros([1, 1, 2, 2]);
        let b = Tensor::zeros([1, 1, 3, 2]);
        assert!(matches!(
            Tensor::concat_width(&[&a, &b]),
            Err(Error::Shape { .. })
        ));
    }
}
