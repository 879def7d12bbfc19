use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Side length of the square pixel patch that maps to one latent cell.
pub const PATCH: usize = 8;

/// BT.601 luma weights.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Planar RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    /// `[R plane | G plane | B plane]`, each row-major `height * width`.
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != 3 * height * width {
            return Err(Error::shape("image", &[3, height, width], &[data.len()]));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        check_dims(height, width)?;
        let plane = height * width;
        let mut data = Vec::with_capacity(3 * plane);
        for c in rgb {
            data.extend(std::iter::repeat_n(c.clamp(0.0, 1.0), plane));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn black(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, [0.0; 3])
    }

    pub fn white(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, [1.0; 3])
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let plane = self.height * self.width;
        let i = y * self.width + x;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    /// Writes a pixel, clamping each channel into `[0, 1]`.
    #[inline]
    pub fn put(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let plane = self.height * self.width;
        let i = y * self.width + x;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[c * plane + i] = v.clamp(0.0, 1.0);
        }
    }

    pub fn luma_at(&self, y: usize, x: usize) -> f32 {
        luma(self.get(y, x))
    }

    /// Luma plane, row-major.
    pub fn luma_plane(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        (0..plane)
            .map(|i| luma([self.data[i], self.data[plane + i], self.data[2 * plane + i]]))
            .collect()
    }

    /// `(1, 3, H, W)` tensor view of the pixels.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 3, self.height, self.width], self.data.clone())
            .expect("image dims are consistent")
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f32> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                "image diff",
                &[self.height, self.width],
                &[other.height, other.width],
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Copies `src` into this image with its top-left corner at `(y0, x0)`.
    pub fn blit(&mut self, src: &Image, y0: usize, x0: usize) {
        for y in 0..src.height.min(self.height.saturating_sub(y0)) {
            for x in 0..src.width.min(self.width.saturating_sub(x0)) {
                self.put(y0 + y, x0 + x, src.get(y, x));
            }
        }
    }
}

/// BT.601 luma. Neutral pixels map to their own value exactly.
#[inline]
pub fn luma(rgb: [f32; 3]) -> f32 {
    if rgb[0] == rgb[1] && rgb[1] == rgb[2] {
        return rgb[0];
    }
    LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || !height.is_multiple_of(PATCH) || !width.is_multiple_of(PATCH) {
        return Err(Error::shape(
            "image dims (multiple of 8)",
            &[height, width],
            &[PATCH, PATCH],
        ));
    }
    Ok(())
}

/// Replaces every pixel with its BT.601 luma on all three channels.
pub fn to_grayscale(img: &Image) -> Image {
    let plane = img.height * img.width;
    let l = img.luma_plane();
    let mut data = Vec::with_capacity(3 * plane);
    for _ in 0..3 {
        data.extend(l.iter().map(|v| v.clamp(0.0, 1.0)));
    }
    Image {
        height: img.height,
        width: img.width,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_multiple_of_eight() {
        assert!(Image::black(12, 16).is_err());
        assert!(Image::new(8, 8, vec![0.5; 3 * 64]).is_ok());
        assert!(Image::new(8, 8, vec![1.5; 3 * 64]).is_err());
    }

    #[test]
    fn grayscale_white_stays_white() {
        let g = to_grayscale(&Image::white(8, 8).unwrap());
        assert!(g.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn grayscale_of_red_is_luma_weight() {
        let g = to_grayscale(&Image::filled(8, 8, [1.0, 0.0, 0.0]).unwrap());
        for v in g.data() {
            assert!((v - 0.299).abs() < 1e-7);
        }
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        prop::collection::vec(0.0f32..=1.0, 3 * 64).prop_map(|d| Image::new(8, 8, d).unwrap())
    }

    proptest! {
        #[test]
        fn grayscale_channels_equal_and_idempotent(img in arb_image()) {
            let g = to_grayscale(&img);
            for y in 0..8 {
                for x in 0..8 {
                    let [r, gg, b] = g.get(y, x);
                    prop_assert_eq!(r, gg);
                    prop_assert_eq!(gg, b);
                }
            }
            let gg = to_grayscale(&g);
            prop_assert_eq!(gg, g);
        }
    }
}
