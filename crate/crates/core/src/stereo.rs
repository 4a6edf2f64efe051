//! Dense disparity on a rectified pair.
//!
//! Disparity is `d = u_left − u_right`, positive after rectification. The
//! default matcher is winner-take-all NCC block matching with parabolic
//! sub-pixel refinement and a left-right consistency check.

use rayon::prelude::*;
use thiserror::Error;

use crate::raster::{DepthMap, MaskedRaster, Raster};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StereoError {
    #[error("empty or out-of-range disparity search [{min}, {max}] for width {width}")]
    BadSearchRange { min: f64, max: f64, width: usize },
    #[error("left and right images differ in size")]
    SizeMismatch,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Dense disparity with validity. `offset_resolved` records whether the
/// global offset left by pseudo-rectification has been removed.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub map: MaskedRaster,
    pub offset_resolved: bool,
}

impl DisparityMap {
    pub fn dims(&self) -> (usize, usize) {
        self.map.dims()
    }

    /// The same map with `offset` added to every valid value.
    pub fn shifted(&self, offset: f64) -> DisparityMap {
        let values = Raster::from_fn(self.map.width(), self.map.height(), |x, y| {
            let v = self.map.values.get(x, y);
            if self.map.valid.get(x, y) {
                (v as f64 + offset) as f32
            } else {
                v
            }
        });
        DisparityMap {
            map: MaskedRaster::new(values, self.map.valid.clone()),
            offset_resolved: self.offset_resolved,
        }
    }
}

/// Inclusive disparity search interval, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchRange {
    pub min: f64,
    pub max: f64,
}

impl SearchRange {
    /// `[phi − 20, phi + f·C_lr·(1/z_min − 1/z_max) + 20]`, clamped to `[0, width − 1]`.
    pub fn from_depth_bounds(phi: f64, f: f64, c_lr: f64, z_min: f64, z_max: f64, width: usize) -> Self {
        const SLACK: f64 = 20.0;
        let spread = f * c_lr * (1.0 / z_min - 1.0 / z_max);
        let limit = width.saturating_sub(1) as f64;
        SearchRange {
            min: (phi - SLACK).clamp(0.0, limit),
            max: (phi + spread + SLACK).clamp(0.0, limit),
        }
    }
}

pub trait StereoMatcher: Sync {
    fn compute(&self, left: &MaskedRaster, right: &MaskedRaster, search: SearchRange) -> Result<DisparityMap, StereoError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatchParams {
    /// Window half-width; 4 gives 9×9 windows.
    pub radius: usize,
    /// Maximum left-right disagreement, pixels.
    pub lr_threshold: f64,
    /// Winners with NCC below this are invalid.
    pub min_ncc: f64,
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        Self {
            radius: 4,
            lr_threshold: 1.0,
            min_ncc: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BlockMatcher {
    pub params: BlockMatchParams,
}

impl StereoMatcher for BlockMatcher {
    fn compute(&self, left: &MaskedRaster, right: &MaskedRaster, search: SearchRange) -> Result<DisparityMap, StereoError> {
        compute_disparity(left, right, search, &self.params)
    }
}

/// Window statistics from summed-area tables over values, squares and the
/// invalid-pixel count.
struct WindowStats {
    w: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    bad: Vec<u32>,
}

impl WindowStats {
    fn new(img: &MaskedRaster) -> Self {
        let (w, h) = img.dims();
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut sum_sq = vec![0.0; stride * (h + 1)];
        let mut bad = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let (mut rs, mut rq, mut rb) = (0.0, 0.0, 0u32);
            for x in 0..w {
                let ok = img.valid.get(x, y);
                let v = if ok { img.values.get(x, y) as f64 } else { 0.0 };
                rs += v;
                rq += v * v;
                rb += u32::from(!ok);
                let i = (y + 1) * stride + x + 1;
                sum[i] = sum[i - stride] + rs;
                sum_sq[i] = sum_sq[i - stride] + rq;
                bad[i] = bad[i - stride] + rb;
            }
        }
        Self { w: stride, sum, sum_sq, bad }
    }

    /// (sum, sum of squares, invalid count) over `[x0, x1) × [y0, y1)`.
    #[inline]
    fn window(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> (f64, f64, u32) {
        let s = self.w;
        let box_f = |t: &[f64]| t[y1 * s + x1] - t[y0 * s + x1] - t[y1 * s + x0] + t[y0 * s + x0];
        let bad = self.bad[y1 * s + x1] + self.bad[y0 * s + x0] - self.bad[y0 * s + x1] - self.bad[y1 * s + x0];
        (box_f(&self.sum), box_f(&self.sum_sq), bad)
    }
}

/// Sub-pixel vertex of a parabola through three equally spaced samples.
#[inline]
fn parabola_offset(l: f32, c: f32, r: f32) -> f64 {
    let denom = (l as f64 + r as f64) - 2.0 * c as f64;
    if denom < 0.0 {
        (0.5 * (l as f64 - r as f64) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Per-row winners: (left disparity, left score) indexed by left x and the
/// integer winner for each right x.
struct RowResult {
    left: Vec<Option<(f64, i64)>>,
    right_winner: Vec<Option<i64>>,
}

#[allow(clippy::too_many_arguments)]
fn match_row(
    y: usize,
    left: &MaskedRaster,
    right: &MaskedRaster,
    ls: &WindowStats,
    rs: &WindowStats,
    d_lo: i64,
    d_hi: i64,
    params: &BlockMatchParams,
) -> RowResult {
    let (w, h) = left.dims();
    let r = params.radius;
    let n_d = (d_hi - d_lo + 1) as usize;
    let mut ncc = vec![f32::NEG_INFINITY; n_d * w];
    let mut result = RowResult {
        left: vec![None; w],
        right_winner: vec![None; w],
    };
    if y < r || y + r >= h {
        return result;
    }
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let (y0, y1) = (y - r, y + r + 1);

    // Column sums of L·R over the window rows, then a horizontal sliding sum.
    let mut col = vec![0.0f64; w];
    for (k, d) in (d_lo..=d_hi).enumerate() {
        let du = d as usize;
        col.iter_mut().for_each(|c| *c = 0.0);
        for yy in y0..y1 {
            let lrow = left.values.row(yy);
            let rrow = right.values.row(yy);
            for x in du..w {
                col[x] += lrow[x] as f64 * rrow[x - du] as f64;
            }
        }
        let x_start = du + r;
        if x_start + r >= w {
            continue;
        }
        let mut acc: f64 = col[x_start - r..=x_start + r].iter().sum();
        for x in x_start..w - r {
            if x > x_start {
                acc += col[x + r] - col[x - r - 1];
            }
            let (sl, ql, bl) = ls.window(x - r, y0, x + r + 1, y1);
            let xr = x - du;
            let (sr, qr, br) = rs.window(xr - r, y0, xr + r + 1, y1);
            if bl > 0 || br > 0 {
                continue;
            }
            let vl = ql - sl * sl / n;
            let vr = qr - sr * sr / n;
            if vl <= 1e-9 * n || vr <= 1e-9 * n {
                continue;
            }
            let cov = acc - sl * sr / n;
            ncc[k * w + x] = (cov / (vl * vr).sqrt()) as f32;
        }
    }

    // Only pixels whose whole search range is evaluable get a winner.
    let reach = d_hi as usize + r;
    let min_ncc = params.min_ncc as f32;
    for x in reach.min(w)..w {
        let mut best: Option<(usize, f32)> = None;
        for k in 0..n_d {
            let v = ncc[k * w + x];
            if v > f32::NEG_INFINITY && best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        let Some((k, v)) = best else { continue };
        if v < min_ncc {
            continue;
        }
        let sub = if k > 0 && k + 1 < n_d {
            let (l, c, rr) = (ncc[(k - 1) * w + x], v, ncc[(k + 1) * w + x]);
            if l > f32::NEG_INFINITY && rr > f32::NEG_INFINITY {
                parabola_offset(l, c, rr)
            } else {
                0.0
            }
        } else {
            0.0
        };
        let d = d_lo + k as i64;
        result.left[x] = Some((d as f64 + sub, d));
    }
    for xr in 0..w.saturating_sub(reach) {
        let mut best: Option<(i64, f32)> = None;
        for (k, d) in (d_lo..=d_hi).enumerate() {
            let xl = xr + d as usize;
            if xl >= w {
                break;
            }
            let v = ncc[k * w + xl];
            if v > f32::NEG_INFINITY && best.is_none_or(|(_, b)| v > b) {
                best = Some((d, v));
            }
        }
        result.right_winner[xr] = best.map(|(d, _)| d);
    }
    result
}

/// NCC block matching along rows of a rectified pair; see [`BlockMatchParams`].
pub fn compute_disparity(
    left: &MaskedRaster,
    right: &MaskedRaster,
    search: SearchRange,
    params: &BlockMatchParams,
) -> Result<DisparityMap, StereoError> {
    if left.dims() != right.dims() {
        return Err(StereoError::SizeMismatch);
    }
    if params.radius == 0 || !(params.lr_threshold >= 0.0) {
        return Err(StereoError::InvalidParams("window radius must be >= 1".into()));
    }
    let (w, h) = left.dims();
    let d_lo = search.min.floor() as i64;
    let d_hi = search.max.ceil() as i64;
    if !(search.min <= search.max) || d_lo < 0 || d_hi >= w as i64 {
        return Err(StereoError::BadSearchRange {
            min: search.min,
            max: search.max,
            width: w,
        });
    }
    let (ls, rs) = rayon::join(|| WindowStats::new(left), || WindowStats::new(right));
    let rows: Vec<Vec<Option<f32>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let row = match_row(y, left, right, &ls, &rs, d_lo, d_hi, params);
            (0..w)
                .map(|x| {
                    let (d, di) = row.left[x]?;
                    let xr = x as i64 - di;
                    let back = row.right_winner[usize::try_from(xr).ok()?]?;
                    ((back - di).abs() as f64 <= params.lr_threshold).then_some(d as f32)
                })
                .collect()
        })
        .collect();
    let flat: Vec<Option<f32>> = rows.into_iter().flatten().collect();
    let values = Raster::from_vec(w, h, flat.iter().map(|v| v.unwrap_or(0.0)).collect()).expect("size");
    let valid = Raster::from_vec(w, h, flat.iter().map(Option::is_some).collect()).expect("size");
    Ok(DisparityMap {
        map: MaskedRaster::new(values, valid),
        offset_resolved: false,
    })
}

/// Ground-truth disparity `f·C_lr / z + offset` from a depth map already in
/// the rectified left frame. Non-positive depths become invalid.
pub fn oracle_disparity(depth: &DepthMap, f: f64, c_lr: f64, offset: f64) -> DisparityMap {
    let (w, h) = depth.dims();
    let valid = Raster::from_fn(w, h, |x, y| depth.valid.get(x, y) && depth.values.get(x, y) > 0.0);
    let values = Raster::from_fn(w, h, |x, y| {
        if valid.get(x, y) {
            (f * c_lr / depth.values.get(x, y) as f64 + offset) as f32
        } else {
            0.0
        }
    });
    DisparityMap {
        map: MaskedRaster::new(values, valid),
        offset_resolved: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::ValueNoise;

    fn textured(w: usize, h: usize, seed: u64) -> Raster<f32> {
        let noise = ValueNoise::new(seed, 5.0);
        Raster::from_fn(w, h, |x, y| noise.sample(x as f64, y as f64, 0.3) as f32)
    }

    /// `right(x) = left(x + s)`, so the true disparity is `s` everywhere.
    fn shift_pair(s: usize) -> (MaskedRaster, MaskedRaster) {
        let (w, h) = (160, 60);
        let wide = textured(w + s, h, 4);
        let left = Raster::from_fn(w, h, |x, y| wide.get(x, y));
        let right = Raster::from_fn(w, h, |x, y| wide.get(x + s, y));
        (MaskedRaster::fully_valid(left), MaskedRaster::fully_valid(right))
    }

    #[test]
    fn pure_shift_is_recovered() {
        for s in [3usize, 11] {
            let (l, r) = shift_pair(s);
            let d = compute_disparity(&l, &r, SearchRange { min: 0.0, max: 20.0 }, &BlockMatchParams::default()).unwrap();
            let valid: Vec<f32> = d.map.iter_valid().map(|(_, _, v)| v).collect();
            assert!(valid.len() > 4000);
            let exact = valid.iter().filter(|&&v| (v - s as f32).abs() <= 0.5).count();
            assert!(exact as f64 >= 0.95 * valid.len() as f64, "shift {s}: {exact}/{}", valid.len());
        }
    }

    #[test]
    fn textureless_input_is_invalid() {
        let flat = MaskedRaster::fully_valid(Raster::filled(100, 40, 0.4f32));
        let d = compute_disparity(&flat, &flat, SearchRange { min: 0.0, max: 10.0 }, &BlockMatchParams::default()).unwrap();
        assert_eq!(d.map.valid_count(), 0);
        assert!(!d.offset_resolved);
    }

    #[test]
    fn shift_equivariance() {
        let (w, h) = (150, 50);
        let base = textured(w + 12, h, 9);
        let left = MaskedRaster::fully_valid(Raster::from_fn(w, h, |x, y| base.get(x, y)));
        let right_a = MaskedRaster::fully_valid(Raster::from_fn(w, h, |x, y| base.get(x + 8, y)));
        let right_b = MaskedRaster::fully_valid(Raster::from_fn(w, h, |x, y| base.get(x + 5, y)));
        let p = BlockMatchParams::default();
        let sr = SearchRange { min: 0.0, max: 25.0 };
        let a = compute_disparity(&left, &right_a, sr, &p).unwrap();
        let b = compute_disparity(&left, &right_b, sr, &p).unwrap();
        let (mut both, mut agree) = (0, 0);
        for y in 0..h {
            for x in 0..w {
                if let (Some(da), Some(db)) = (a.map.at(x, y), b.map.at(x, y)) {
                    both += 1;
                    if (db - (da - 3.0)).abs() <= 0.5 {
                        agree += 1;
                    }
                }
            }
        }
        assert!(both > 1000);
        assert_eq!(agree, both);
    }

    #[test]
    fn search_range_is_validated() {
        let (l, r) = shift_pair(2);
        let p = BlockMatchParams::default();
        for sr in [SearchRange { min: 5.0, max: 1.0 }, SearchRange { min: -1.0, max: 4.0 }, SearchRange { min: 0.0, max: 500.0 }] {
            assert!(matches!(compute_disparity(&l, &r, sr, &p), Err(StereoError::BadSearchRange { .. })));
        }
    }

    #[test]
    fn default_range_formula() {
        let sr = SearchRange::from_depth_bounds(50.0, 10990.8, 2.0, 250.0, 350.0, 1152);
        assert_eq!(sr.min, 30.0);
        let spread = 10990.8 * 2.0 * (1.0 / 250.0 - 1.0 / 350.0);
        assert!((sr.max - (70.0 + spread)).abs() < 1e-9);
    }

    #[test]
    fn oracle_examples() {
        let depth = MaskedRaster::fully_valid(Raster::filled(3, 2, 300.0f32));
        let d = oracle_disparity(&depth, 43963.0, 2.0, 0.0);
        assert!((d.map.at(1, 1).unwrap() as f64 - 293.087).abs() < 1e-3);
        let shifted = oracle_disparity(&depth, 43963.0, 2.0, -250.0);
        assert_eq!(shifted.map.at(0, 0).unwrap(), (43963.0 * 2.0 / 300.0f64 - 250.0) as f32);

        let mut bad = depth.clone();
        bad.values.set(0, 0, -1.0);
        assert_eq!(oracle_disparity(&bad, 43963.0, 2.0, 0.0).map.at(0, 0), None);
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let (l, r) = shift_pair(5);
        let sr = SearchRange { min: 0.0, max: 12.0 };
        let run = |n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| compute_disparity(&l, &r, sr, &BlockMatchParams::default()).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
