//! Dense row-major rasters and the masked variants used for images, depth
//! and disparity.
//!
//! Pixel coordinates are continuous with the origin at the centre of the
//! top-left pixel: `u` is the column, `v` the row.

/// A row-major 2D grid of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Wraps an existing buffer. Returns `None` if the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

impl Raster<f32> {
    /// Bilinear sample at a continuous position. `None` outside the pixel-centre hull.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<f32> {
        if self.width == 0 || self.height == 0 || !self.contains(u, v) {
            return None;
        }
        let x0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (u - x0 as f64) as f32;
        let fy = (v - y0 as f64) as f32;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    pub fn mean_and_variance(&self) -> (f64, f64) {
        mean_and_variance(self.data.iter().map(|&v| v as f64))
    }
}

pub(crate) fn mean_and_variance(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        sum += v;
        sum_sq += v * v;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    (mean, (sum_sq / n as f64 - mean * mean).max(0.0))
}

/// Grayscale intensity image, nominally in `[0, 1]`.
pub type GrayImage = Raster<f32>;

/// A float raster paired with a per-pixel validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedRaster {
    pub values: Raster<f32>,
    pub valid: Raster<bool>,
}

/// Metric depth (camera-frame z, meters) with validity.
pub type DepthMap = MaskedRaster;

impl MaskedRaster {
    pub fn new(values: Raster<f32>, valid: Raster<bool>) -> Self {
        assert_eq!(values.dims(), valid.dims(), "mask and values must agree in size");
        Self { values, valid }
    }

    /// Every pixel valid.
    pub fn fully_valid(values: Raster<f32>) -> Self {
        let valid = Raster::filled(values.width(), values.height(), true);
        Self { values, valid }
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            values: Raster::filled(width, height, 0.0),
            valid: Raster::filled(width, height, false),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.values.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.values.height()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    /// Value at an integer pixel if valid.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<f32> {
        self.valid.get(x, y).then(|| self.values.get(x, y))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.as_slice().iter().filter(|&&v| v).count()
    }

    /// Bilinear lookup requiring all four neighbours to be valid.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<f32> {
        if !self.values.contains(u, v) {
            return None;
        }
        let w = self.width();
        let h = self.height();
        let x0 = (u.floor() as usize).min(w.saturating_sub(2));
        let y0 = (v.floor() as usize).min(h.saturating_sub(2));
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let all_valid = self.valid.get(x0, y0)
            && self.valid.get(x1, y0)
            && self.valid.get(x0, y1)
            && self.valid.get(x1, y1);
        if !all_valid {
            return None;
        }
        self.values.sample_bilinear(u, v)
    }

    /// Iterator over `(x, y, value)` of valid pixels.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        let w = self.width();
        self.values
            .as_slice()
            .iter()
            .zip(self.valid.as_slice())
            .enumerate()
            .filter(|(_, (_, &ok))| ok)
            .map(move |(i, (&v, _))| (i % w, i / w, v))
    }

    /// Encodes invalid pixels as negative infinity, the on-disk convention.
    pub fn to_sentinel_raster(&self) -> Raster<f32> {
        let data = self
            .values
            .as_slice()
            .iter()
            .zip(self.valid.as_slice())
            .map(|(&v, &ok)| if ok { v } else { f32::NEG_INFINITY })
            .collect();
        Raster::from_vec(self.width(), self.height(), data).expect("same size")
    }

    /// Inverse of [`MaskedRaster::to_sentinel_raster`]: `-inf` and NaN become invalid.
    pub fn from_sentinel_raster(raster: Raster<f32>) -> Self {
        let valid = raster.map(|v| !(v.is_nan() || v == f32::NEG_INFINITY));
        let values = raster.map(|v| if v.is_nan() || v == f32::NEG_INFINITY { 0.0 } else { v });
        Self { values, valid }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_interpolates_between_centres() {
        let r = Raster::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.sample_bilinear(0.0, 0.0), Some(0.0));
        assert_eq!(r.sample_bilinear(1.0, 1.0), Some(3.0));
        assert!((r.sample_bilinear(0.5, 0.5).unwrap() - 1.5).abs() < 1e-6);
        assert_eq!(r.sample_bilinear(1.01, 0.0), None);
        assert_eq!(r.sample_bilinear(-0.01, 0.0), None);
    }

    #[test]
    fn sentinel_round_trip() {
        let mut m = MaskedRaster::fully_valid(Raster::from_fn(3, 2, |x, y| (x + 10 * y) as f32));
        m.valid.set(1, 1, false);
        let back = MaskedRaster::from_sentinel_raster(m.to_sentinel_raster());
        assert_eq!(back.valid, m.valid);
        assert_eq!(back.at(2, 1), Some(12.0));
        assert_eq!(back.at(1, 1), None);
    }

    #[test]
    fn masked_bilinear_needs_all_neighbours() {
        let mut m = MaskedRaster::fully_valid(Raster::from_fn(3, 3, |x, _| x as f32));
        assert!((m.sample_bilinear(0.5, 0.5).unwrap() - 0.5).abs() < 1e-6);
        m.valid.set(1, 1, false);
        assert_eq!(m.sample_bilinear(0.5, 0.5), None);
        assert!(m.sample_bilinear(1.5, 1.5).is_none());
    }
}
