//! Heatmap rendering of explanation maps over the input image.
//!
//! The colormap is piecewise linear through five stops:
//!
//! | value | RGB           |
//! |-------|---------------|
//! | 0.00  | (0, 0, 255)   |
//! | 0.25  | (0, 255, 255) |
//! | 0.50  | (0, 255, 0)   |
//! | 0.75  | (255, 255, 0) |
//! | 1.00  | (255, 0, 0)   |
//!
//! Values outside `[0, 1]` are clamped. Blending happens on 8-bit channels:
//! `out = round((1 - alpha) * pixel + alpha * color)`.

use anyhow::{bail, Result};
use image::{Rgb, RgbImage};
use vqi_core::imageio;
use vqi_core::Tensor;

pub const COLORMAP_STOPS: [(f64, [f64; 3]); 5] = [
    (0.0, [0.0, 0.0, 255.0]),
    (0.25, [0.0, 255.0, 255.0]),
    (0.5, [0.0, 255.0, 0.0]),
    (0.75, [255.0, 255.0, 0.0]),
    (1.0, [255.0, 0.0, 0.0]),
];

/// Colormap value in 8-bit channel units, unrounded.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    for pair in COLORMAP_STOPS.windows(2) {
        let ((a, ca), (b, cb)) = (pair[0], pair[1]);
        if v <= b {
            let t = (v - a) / (b - a);
            return [0, 1, 2].map(|i| ca[i] + t * (cb[i] - ca[i]));
        }
    }
    COLORMAP_STOPS[4].1
}

/// Blends the colorized `map` (H×W) over `image` (3×H×W).
pub fn render_overlay(image: &Tensor, map: &Tensor, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        bail!("alpha {alpha} is outside [0, 1]");
    }
    if map.rank() != 2 || map.spatial() != image.spatial() {
        bail!("map {:?} does not match image {:?}", map.shape(), image.shape());
    }
    let mut img = imageio::rgb_from_tensor(image)?;
    let w = img.width() as usize;
    let values = map.data();
    for (x, y, px) in img.enumerate_pixels_mut() {
        let color = colormap(values[y as usize * w + x as usize]);
        let blended = [0, 1, 2].map(|c| ((1.0 - alpha) * px[c] as f64 + alpha * color[c]).round() as u8);
        *px = Rgb(blended);
    }
    Ok(img)
}

pub fn export_overlay(image: &Tensor, map: &Tensor, alpha: f64) -> Result<Vec<u8>> {
    Ok(imageio::encode_png_rgb(&render_overlay(image, map, alpha)?)?)
}
