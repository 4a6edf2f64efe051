//! Harris corner response and non-maximum suppression.

use rayon::prelude::*;

use crate::raster::{GrayImage, Raster};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarrisParams {
    pub k: f64,
    /// Standard deviation of the structure-tensor window, pixels.
    pub window_sigma: f64,
    pub nms_radius: usize,
    pub max_corners: usize,
    /// Corners closer than this to the image edge are discarded.
    pub border: usize,
}

impl Default for HarrisParams {
    fn default() -> Self {
        Self {
            k: 0.04,
            window_sigma: 1.5,
            nms_radius: 5,
            max_corners: 4000,
            border: 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: usize,
    pub y: usize,
    pub response: f32,
}

fn sobel(img: &GrayImage) -> (Raster<f32>, Raster<f32>) {
    let (w, h) = img.dims();
    let at = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        img.get(xc, yc)
    };
    let gx = Raster::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1))
    });
    let gy = Raster::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
            - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1))
    });
    (gx, gy)
}

/// Separable Gaussian blur with clamped borders, kernel radius `ceil(3σ)`.
fn gaussian_blur(img: &Raster<f32>, sigma: f64) -> Raster<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let sum: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    let (w, h) = img.dims();
    let horizontal = Raster::from_fn(w, h, |x, y| {
        let row = img.row(y);
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * row[(x as isize + i as isize - radius).clamp(0, w as isize - 1) as usize])
            .sum::<f32>()
    });
    Raster::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let yy = (y as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
                k * horizontal.get(x, yy)
            })
            .sum::<f32>()
    })
}

/// `det(M) − k·trace(M)²` of the Gaussian-windowed structure tensor.
pub fn harris_response(img: &GrayImage, params: &HarrisParams) -> Raster<f32> {
    let (gx, gy) = sobel(img);
    let (w, h) = img.dims();
    let xx = gaussian_blur(&Raster::from_fn(w, h, |x, y| gx.get(x, y) * gx.get(x, y)), params.window_sigma);
    let yy = gaussian_blur(&Raster::from_fn(w, h, |x, y| gy.get(x, y) * gy.get(x, y)), params.window_sigma);
    let xy = gaussian_blur(&Raster::from_fn(w, h, |x, y| gx.get(x, y) * gy.get(x, y)), params.window_sigma);
    let k = params.k as f32;
    Raster::from_fn(w, h, |x, y| {
        let (a, b, c) = (xx.get(x, y), yy.get(x, y), xy.get(x, y));
        a * b - c * c - k * (a + b) * (a + b)
    })
}

/// Local maxima of the Harris response within a square of half-width
/// `nms_radius`, strongest first, at most `max_corners`. Equal responses are
/// resolved in favour of the lower row-major index.
pub fn detect_corners(img: &GrayImage, params: &HarrisParams) -> Vec<Corner> {
    let response = harris_response(img, params);
    let (w, h) = img.dims();
    let b = params.border;
    if w <= 2 * b || h <= 2 * b {
        return Vec::new();
    }
    let r = params.nms_radius as isize;
    let mut corners: Vec<Corner> = (b..h - b)
        .into_par_iter()
        .flat_map_iter(|y| {
            let response = &response;
            (b..w - b).filter_map(move |x| {
                let v = response.get(x, y);
                if v <= 0.0 {
                    return None;
                }
                let idx = y * w + x;
                for dy in -r..=r {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let xx = x as isize + dx;
                        if xx < 0 || xx >= w as isize || (dx == 0 && dy == 0) {
                            continue;
                        }
                        let o = response.get(xx as usize, yy as usize);
                        let oidx = yy as usize * w + xx as usize;
                        if o > v || (o == v && oidx < idx) {
                            return None;
                        }
                    }
                }
                Some(Corner { x, y, response: v })
            })
        })
        .collect();
    corners.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then((a.y, a.x).cmp(&(b.y, b.x)))
    });
    corners.truncate(params.max_corners);
    corners
}
