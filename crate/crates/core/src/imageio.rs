//! PNG conversion for RGB image tensors (3×H×W in `[0, 1]`) and masks.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every value to the nearest multiple of 1/255, matching what a PNG
/// round trip stores.
pub fn quantize(t: &Tensor) -> Tensor {
    t.map(|v| to_u8(v) as f64 / 255.0).expect("quantized values are finite")
}

pub fn rgb_from_tensor(t: &Tensor) -> Result<RgbImage> {
    if t.rank() != 3 || t.shape()[0] != 3 {
        return Err(Error::Shape(format!("expected 3xHxW image, got {:?}", t.shape())));
    }
    let (h, w) = t.spatial();
    let (r, g, b) = (t.channel_slice(0), t.channel_slice(1), t.channel_slice(2));
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(r[i]), to_u8(g[i]), to_u8(b[i])])
    }))
}

pub fn tensor_from_rgb(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("pixel data is finite")
}

pub fn encode_png_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn image_to_png(t: &Tensor) -> Result<Vec<u8>> {
    encode_png_rgb(&rgb_from_tensor(t)?)
}

pub fn png_to_image(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    Ok(tensor_from_rgb(&img))
}

pub fn save_image(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, image_to_png(t)?).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    png_to_image(&bytes)
}

/// 8-bit grayscale PNG with set pixels at 255.
pub fn mask_to_png(mask: &Mask) -> Result<Vec<u8>> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}
