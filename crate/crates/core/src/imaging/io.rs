//! 8-bit PNG encoding for images, masks, and pose maps.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

use super::image::Image;
use super::mask::BinaryMask;
use super::posemap::PoseMap;

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

fn decode(bytes: &[u8]) -> std::result::Result<Decoded, String> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| "image too large".to_string())?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err("unexpanded indexed PNG".into()),
    };
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        data: buf,
    })
}

/// RGB8 PNG bytes, values quantized by `round(v * 255)`.
pub fn image_to_png(img: &Image) -> Vec<u8> {
    let (h, w) = img.dims();
    let mut raw = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            raw.extend(img.get(y, x).map(quantize));
        }
    }
    encode(w, h, png::ColorType::Rgb, &raw)
}

pub fn image_from_png(bytes: &[u8]) -> std::result::Result<Image, String> {
    let d = decode(bytes)?;
    let plane = d.width * d.height;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            let src = if d.channels >= 3 { c } else { 0 };
            data[c * plane + i] = d.data[i * d.channels + src] as f32 / 255.0;
        }
    }
    Image::new(d.height, d.width, data).map_err(|e| e.to_string())
}

/// Single-channel PNG: kept pixels 255, editable pixels 0.
pub fn mask_to_png(m: &BinaryMask) -> Vec<u8> {
    let raw: Vec<u8> = m.data().iter().map(|&v| v * 255).collect();
    encode(m.width(), m.height(), png::ColorType::Grayscale, &raw)
}

pub fn mask_from_png(bytes: &[u8]) -> std::result::Result<BinaryMask, String> {
    let d = decode(bytes)?;
    let data = (0..d.width * d.height)
        .map(|i| match d.data[i * d.channels] {
            0 => Ok(0),
            255 => Ok(1),
            v => Err(format!("mask value {v} is neither 0 nor 255")),
        })
        .collect::<std::result::Result<Vec<u8>, String>>()?;
    BinaryMask::new(d.height, d.width, data).map_err(|e| e.to_string())
}

/// Single-channel PNG holding raw part labels.
pub fn posemap_to_png(pm: &PoseMap) -> Vec<u8> {
    encode(
        pm.width(),
        pm.height(),
        png::ColorType::Grayscale,
        pm.labels(),
    )
}

pub fn posemap_from_png(bytes: &[u8]) -> std::result::Result<PoseMap, String> {
    let d = decode(bytes)?;
    let labels = (0..d.width * d.height)
        .map(|i| d.data[i * d.channels])
        .collect();
    PoseMap::new(d.height, d.width, labels).map_err(|e| e.to_string())
}

/// Grayscale PNG of an arbitrary float plane, min-max normalized.
pub fn plane_to_png(values: &[f32], height: usize, width: usize) -> Vec<u8> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let raw: Vec<u8> = values.iter().map(|&v| quantize((v - lo) / span)).collect();
    encode(width, height, png::ColorType::Grayscale, &raw)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path) -> impl FnOnce(String) -> Error + '_ {
    move |msg| Error::Format {
        path: path.into(),
        msg,
    }
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    write_bytes(path, &image_to_png(img))
}

pub fn load_image(path: &Path) -> Result<Image> {
    image_from_png(&read(path)?).map_err(format_err(path))
}

pub fn save_mask(m: &BinaryMask, path: &Path) -> Result<()> {
    write_bytes(path, &mask_to_png(m))
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    mask_from_png(&read(path)?).map_err(format_err(path))
}

pub fn save_posemap(pm: &PoseMap, path: &Path) -> Result<()> {
    write_bytes(path, &posemap_to_png(pm))
}

pub fn load_posemap(path: &Path) -> Result<PoseMap> {
    posemap_from_png(&read(path)?).map_err(format_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_image_survives_png() {
        let data: Vec<f32> = (0..3 * 64)
            .map(|i| ((i * 37) % 256) as f32 / 255.0)
            .collect();
        let img = Image::new(8, 8, data).unwrap();
        let back = image_from_png(&image_to_png(&img)).unwrap();
        assert!(back.max_abs_diff(&img).unwrap() < 1e-6);
    }

    #[test]
    fn mask_png_uses_0_and_255() {
        let m = BinaryMask::from_keep_fn(8, 8, |y, x| (y + x) % 3 != 0);
        let bytes = mask_to_png(&m);
        assert_eq!(mask_from_png(&bytes).unwrap(), m);
        let d = decode(&bytes).unwrap();
        assert_eq!(d.channels, 1);
        assert!(d.data.iter().all(|&v| v == 0 || v == 255));
    }

    #[test]
    fn posemap_png_stores_labels() {
        let pm = PoseMap::new(8, 8, (0..64).map(|i| (i % 9) as u8).collect()).unwrap();
        let bytes = posemap_to_png(&pm);
        assert_eq!(posemap_from_png(&bytes).unwrap(), pm);
    }

    #[test]
    fn non_binary_mask_png_rejected() {
        let bytes = encode(2, 1, png::ColorType::Grayscale, &[0, 128]);
        assert!(mask_from_png(&bytes).is_err());
    }
}
