//! PNG input and output for intensity images and false-colour previews.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::IoError;
use crate::raster::{GrayImage, MaskedRaster, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Loads any PNG as intensity in `[0, 1]`. 8- and 16-bit grayscale map
/// linearly; colour images are reduced to luminance.
pub fn read_gray_png(path: impl AsRef<Path>) -> Result<GrayImage, IoError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| IoError::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match &img {
        DynamicImage::ImageLuma8(b) => b.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.as_raw().iter().map(|&v| v as f32 / 65535.0).collect(),
        other => other.to_luma32f().into_raw(),
    };
    Ok(Raster::from_vec(w, h, data).expect("size"))
}

/// Writes intensities clamped to `[0, 1]`.
pub fn write_gray_png(path: impl AsRef<Path>, img: &GrayImage, depth: BitDepth) -> Result<(), IoError> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let quant = |v: f32, max: f32| (v.clamp(0.0, 1.0) * max).round();
    let result = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img.as_slice().iter().map(|&v| quant(v, 255.0) as u8).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("size").save(path)
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img.as_slice().iter().map(|&v| quant(v, 65535.0) as u16).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("size").save(path)
        }
    };
    result.map_err(|e| IoError::Image(format!("{}: {e}", path.display())))
}

/// Invalid pixels are written as black.
pub fn write_masked_png(path: impl AsRef<Path>, img: &MaskedRaster, depth: BitDepth) -> Result<(), IoError> {
    let (w, h) = img.dims();
    write_gray_png(path, &Raster::from_fn(w, h, |x, y| img.at(x, y).unwrap_or(0.0)), depth)
}

/// Colour stops of the false-colour map, evenly spaced from low to high:
/// dark blue, blue, cyan, yellow, red.
pub const COLORMAP: [[u8; 3]; 5] = [[0, 0, 96], [0, 64, 255], [0, 224, 224], [255, 224, 0], [200, 0, 0]];

/// Linear interpolation through [`COLORMAP`]; values outside `[lo, hi]` clamp.
pub fn false_color(v: f32, lo: f32, hi: f32) -> [u8; 3] {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (COLORMAP.len() - 1) as f32;
    let i = (pos.floor() as usize).min(COLORMAP.len() - 2);
    let frac = pos - i as f32;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    [0, 1, 2].map(|c| (a[c] as f32 + frac * (b[c] as f32 - a[c] as f32)).round() as u8)
}

/// False-colour rendering of a masked raster over `[lo, hi]`; invalid
/// pixels are black.
pub fn write_false_color_png(path: impl AsRef<Path>, m: &MaskedRaster, lo: f32, hi: f32) -> Result<(), IoError> {
    let path = path.as_ref();
    let (w, h) = m.dims();
    let buf = ImageBuffer::<Rgb<u8>, _>::from_fn(w as u32, h as u32, |x, y| {
        Rgb(m.at(x as usize, y as usize).map_or([0, 0, 0], |v| false_color(v, lo, hi)))
    });
    buf.save(path).map_err(|e| IoError::Image(format!("{}: {e}", path.display())))
}
