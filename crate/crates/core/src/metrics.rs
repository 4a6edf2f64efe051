//! Depth accuracy: relative-error maps and the fraction of pixels below
//! fixed error thresholds.

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::AffineTransform;
use crate::raster::{DepthMap, MaskedRaster, Raster};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.01, 0.02, 0.03];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("rectifying transform is not invertible")]
    NotInvertible,
    #[error("size mismatch: estimate {est:?}, ground truth {gt:?}")]
    SizeMismatch { est: (usize, usize), gt: (usize, usize) },
    #[error("no pixel is valid in both estimate and ground truth")]
    NoValidPixels,
}

/// Resamples a depth map into the rectified frame by inverse mapping through
/// `h_l` and taking the nearest source pixel.
pub fn warp_depth_to_rectified(gt: &DepthMap, h_l: &AffineTransform) -> Result<DepthMap, MetricsError> {
    let inv = h_l.inverse().map_err(|_| MetricsError::NotInvertible)?;
    let (w, h) = gt.dims();
    let rows: Vec<(Vec<f32>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut values = vec![0.0f32; w];
            let mut valid = vec![false; w];
            for x in 0..w {
                let (u, v) = inv.apply(x as f64, y as f64);
                let (su, sv) = ((u + 0.5).floor(), (v + 0.5).floor());
                if su < 0.0 || sv < 0.0 || su >= w as f64 || sv >= h as f64 {
                    continue;
                }
                if let Some(z) = gt.at(su as usize, sv as usize) {
                    values[x] = z;
                    valid[x] = true;
                }
            }
            (values, valid)
        })
        .collect();
    let (values, valid): (Vec<Vec<f32>>, Vec<Vec<bool>>) = rows.into_iter().unzip();
    Ok(MaskedRaster::new(
        Raster::from_vec(w, h, values.concat()).expect("size"),
        Raster::from_vec(w, h, valid.concat()).expect("size"),
    ))
}

/// `|z_est − z_gt| / z_gt` on pixels valid in both maps.
pub fn relative_error_map(est: &DepthMap, gt: &DepthMap) -> Result<MaskedRaster, MetricsError> {
    if est.dims() != gt.dims() {
        return Err(MetricsError::SizeMismatch {
            est: est.dims(),
            gt: gt.dims(),
        });
    }
    let (w, h) = gt.dims();
    let mut out = MaskedRaster::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            if let (Some(e), Some(g)) = (est.at(x, y), gt.at(x, y)) {
                if g > 0.0 && e.is_finite() {
                    let rel = ((e as f64 - g as f64).abs() / g as f64) as f32;
                    out.values.set(x, y, rel);
                    out.valid.set(x, y, true);
                }
            }
        }
    }
    if out.valid_count() == 0 {
        return Err(MetricsError::NoValidPixels);
    }
    Ok(out)
}

/// Fraction of valid pixels whose error is strictly below each threshold.
/// An empty map yields zeros.
pub fn threshold_fractions(errors: &MaskedRaster, thresholds: &[f64]) -> Vec<f64> {
    let vals: Vec<f64> = errors
        .values
        .as_slice()
        .iter()
        .zip(errors.valid.as_slice())
        .filter(|(_, &ok)| ok)
        .map(|(&e, _)| e as f64)
        .collect();
    thresholds
        .iter()
        .map(|&t| {
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().filter(|&&e| e < t).count() as f64 / vals.len() as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub relative_error: MaskedRaster,
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
    pub valid_pixel_count: usize,
}

impl ErrorReport {
    pub fn from_map(relative_error: MaskedRaster, thresholds: &[f64]) -> Self {
        let fractions = threshold_fractions(&relative_error, thresholds);
        Self {
            valid_pixel_count: relative_error.valid_count(),
            relative_error,
            thresholds: thresholds.to_vec(),
            fractions,
        }
    }

    /// Fraction for an exact threshold value, if it was evaluated.
    pub fn fraction_below(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| t == threshold)
            .map(|i| self.fractions[i])
    }
}

pub fn evaluate_depth(est: &DepthMap, gt: &DepthMap, thresholds: &[f64]) -> Result<ErrorReport, MetricsError> {
    Ok(ErrorReport::from_map(relative_error_map(est, gt)?, thresholds))
}

/// Unweighted mean of per-scene fractions over the scenes that succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub thresholds: Vec<f64>,
    pub mean_fractions: Vec<f64>,
    pub successes: usize,
    pub failures: usize,
}

pub fn aggregate_scenes(thresholds: &[f64], scenes: &[Option<ErrorReport>]) -> AggregateReport {
    let ok: Vec<&ErrorReport> = scenes.iter().flatten().collect();
    let mean_fractions = (0..thresholds.len())
        .map(|i| {
            if ok.is_empty() {
                0.0
            } else {
                ok.iter().map(|r| r.fractions[i]).sum::<f64>() / ok.len() as f64
            }
        })
        .collect();
    AggregateReport {
        thresholds: thresholds.to_vec(),
        mean_fractions,
        successes: ok.len(),
        failures: scenes.len() - ok.len(),
    }
}
