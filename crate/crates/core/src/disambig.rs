//! Removing the global disparity offset with the back view.
//!
//! Two scene points at the same left-camera depth `z` appear `m_l` pixels
//! apart in the left image and `m_b` pixels apart in the back image, which
//! sits `C_lb` further away along the optical axis. Then
//! `z = C_lb / (m_l/m_b − 1)`, and the disparity those points should have is
//! `f·C_lr/z`. Comparing that with the ambiguous disparity `(d1 + d2)/2` read
//! from the stereo output gives one estimate of the missing offset; the median
//! over many sampled pairs is applied to the whole map.

use nalgebra::{Matrix4, Point2, Rotation3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{FeatureError, FeatureMatcher, Match, MatchSet};
use crate::geometry::AffineTransform;
use crate::raster::{DepthMap, GrayImage, MaskedRaster, Raster};
use crate::stereo::DisparityMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisambigError {
    #[error("physically invalid pair: m_l = {m_l} must exceed m_b = {m_b} > 0")]
    PhysicallyInvalidPair { m_l: f64, m_b: f64 },
    #[error("disparity map offset is already resolved")]
    AlreadyResolved,
    #[error("disparity map offset is not resolved")]
    Unresolved,
    #[error("disambiguation failed: {accepted} estimates accepted, need {required}")]
    Failed { accepted: usize, required: usize },
    #[error("left-back matching failed: {0}")]
    Matching(#[from] FeatureError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("left-back rotation fit failed: {0}")]
    RotationFit(String),
}

/// Focal length and the two rig distances, the only calibration the method needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigConstants {
    pub f: f64,
    pub c_lr: f64,
    pub c_lb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisambigParams {
    /// Minimum left-image distance between the two sampled pixels.
    pub delta: f64,
    /// Maximum disparity difference between the two sampled pixels.
    pub eta: f64,
    pub target_estimates: usize,
    pub max_trials: usize,
    pub min_estimates: usize,
    /// Undo the back camera's rotation relative to the left one, fitted
    /// from the left-back matches, before measuring back-view distances.
    pub compensate_back_rotation: bool,
}

impl Default for DisambigParams {
    fn default() -> Self {
        Self {
            delta: 300.0,
            eta: 3.0,
            target_estimates: 5000,
            max_trials: 250_000,
            min_estimates: 50,
            compensate_back_rotation: true,
        }
    }
}

impl DisambigParams {
    /// Defaults with `delta` scaled from the 4608-pixel reference width.
    pub fn for_width(width: usize) -> Self {
        Self {
            delta: 300.0 * width as f64 / 4608.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DisambigError> {
        if !(self.delta > 0.0 && self.eta > 0.0) || self.target_estimates == 0 {
            return Err(DisambigError::InvalidParams(format!(
                "need delta > 0, eta > 0, target_estimates >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// `z = C_lb / (m_l/m_b − 1)` for two pixels at equal left-camera depth.
pub fn depth_from_same_depth_pair(m_l: f64, m_b: f64, c_lb: f64) -> Result<f64, DisambigError> {
    if !(m_b > 0.0 && m_l > m_b) {
        return Err(DisambigError::PhysicallyInvalidPair { m_l, m_b });
    }
    Ok(c_lb / (m_l / m_b - 1.0))
}

/// Offset `q = f·(C_lr/C_lb)·(m_l/m_b − 1) − (d1 + d2)/2` from one pair of
/// left-back distances and the ambiguous disparities at the two left pixels.
/// `None` when the pair fails any acceptance condition.
pub fn offset_estimate(
    m_l: f64,
    m_b: f64,
    d1: f64,
    d2: f64,
    rig: &RigConstants,
    params: &DisambigParams,
) -> Option<f64> {
    let accepted = m_l > m_b && m_l > params.delta && (d1 - d2).abs() < params.eta;
    accepted.then(|| rig.f * (rig.c_lr / rig.c_lb) * (m_l / m_b - 1.0) - (d1 + d2) / 2.0)
}

/// Lower median: element `(n − 1) / 2` of the sorted values.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[(sorted.len() - 1) / 2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetEstimateSet {
    pub estimates: Vec<f64>,
    pub accepted_offset: f64,
    pub trials_run: usize,
}

impl OffsetEstimateSet {
    /// Equal-width histogram over `[min, max]` of the estimates: `bins + 1`
    /// edges and `bins` counts, the last bin closed on the right.
    pub fn histogram(&self, bins: usize) -> (Vec<f64>, Vec<usize>) {
        let bins = bins.max(1);
        let lo = self.estimates.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return (vec![0.0; bins + 1], vec![0; bins]);
        }
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0usize; bins];
        for &q in &self.estimates {
            let i = (((q - lo) / width).floor() as usize).min(bins - 1);
            counts[i] += 1;
        }
        (edges, counts)
    }
}

/// Samples pairs from `matches` (A = raw left, B = back) and accumulates
/// offset estimates; the resolved map is `disp + median`.
///
/// Left coordinates are mapped through the rigid `h_l` before the disparity
/// lookup; distances are taken in the raw frames, which `h_l` preserves.
pub fn remove_ambiguity_with_matches(
    matches: &MatchSet,
    disp: &DisparityMap,
    h_l: &AffineTransform,
    rig: &RigConstants,
    params: &DisambigParams,
    seed: u64,
) -> Result<(DisparityMap, OffsetEstimateSet), DisambigError> {
    params.validate()?;
    if disp.offset_resolved {
        return Err(DisambigError::AlreadyResolved);
    }
    let ms = &matches.matches;
    let lookups: Vec<Option<f64>> = ms
        .iter()
        .map(|m| {
            let (u, v) = h_l.apply(m.a.x, m.a.y);
            disp.map.sample_bilinear(u, v).map(f64::from)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimates = Vec::with_capacity(params.target_estimates);
    let mut trials = 0;
    if ms.len() >= 2 {
        while estimates.len() < params.target_estimates && trials < params.max_trials {
            trials += 1;
            let i = rng.random_range(0..ms.len());
            let mut j = rng.random_range(0..ms.len() - 1);
            if j >= i {
                j += 1;
            }
            let (Some(d1), Some(d2)) = (lookups[i], lookups[j]) else { continue };
            let (p, q): (&Match, &Match) = (&ms[i], &ms[j]);
            let m_l = (p.a - q.a).norm();
            let m_b = (p.b - q.b).norm();
            if let Some(est) = offset_estimate(m_l, m_b, d1, d2, rig, params) {
                estimates.push(est);
            }
        }
    }
    if estimates.len() < params.min_estimates {
        return Err(DisambigError::Failed {
            accepted: estimates.len(),
            required: params.min_estimates,
        });
    }
    let accepted_offset = lower_median(&estimates).expect("non-empty");
    let mut resolved = disp.shifted(accepted_offset);
    resolved.offset_resolved = true;
    Ok((
        resolved,
        OffsetEstimateSet {
            estimates,
            accepted_offset,
            trials_run: trials,
        },
    ))
}

/// Rotation and scale relating the left view to the back view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackAlignment {
    /// Maps left-frame ray directions into the back camera frame.
    pub rotation: Rotation3<f64>,
    /// Mean `C_lb / z` over the fitted matches.
    pub scale: f64,
    /// Matches kept after outlier trimming.
    pub inliers: usize,
    pub rms: f64,
}

/// Fits `back ~ π(R·(ray_l + s·e_z))` to the left-back matches by
/// Gauss-Newton over the rotation vector of `R` and `s`, with one round of
/// outlier trimming. `c` is the principal point shared by both views.
pub fn fit_back_alignment(matches: &MatchSet, f: f64, c: (f64, f64)) -> Result<BackAlignment, DisambigError> {
    const MIN_MATCHES: usize = 8;
    let ray = |p: &Point2<f64>| Vector3::new((p.x - c.0) / f, (p.y - c.1) / f, 1.0);
    let project = |q: &Vector3<f64>| Point2::new(f * q.x / q.z + c.0, f * q.y / q.z + c.1);
    let predict = |x: &Vector4<f64>, a: &Point2<f64>| {
        let r = Rotation3::from_scaled_axis(Vector3::new(x[0], x[1], x[2]));
        project(&(r * (ray(a) + Vector3::new(0.0, 0.0, x[3]))))
    };
    let fit = |set: &[&Match]| -> Result<(Vector4<f64>, f64), DisambigError> {
        if set.len() < MIN_MATCHES {
            return Err(DisambigError::RotationFit(format!("{} matches, need {MIN_MATCHES}", set.len())));
        }
        let mut x = Vector4::zeros();
        for _ in 0..30 {
            let mut jtj = Matrix4::<f64>::zeros();
            let mut jtr = Vector4::<f64>::zeros();
            for m in set {
                let base = predict(&x, &m.a);
                let res = base - m.b;
                let mut cols = [[0.0; 2]; 4];
                for (k, col) in cols.iter_mut().enumerate() {
                    let h = if k < 3 { 1e-7 } else { 1e-9 };
                    let mut xp = x;
                    xp[k] += h;
                    let mut xm = x;
                    xm[k] -= h;
                    let d = (predict(&xp, &m.a) - predict(&xm, &m.a)) / (2.0 * h);
                    *col = [d.x, d.y];
                }
                for i in 0..4 {
                    jtr[i] += cols[i][0] * res.x + cols[i][1] * res.y;
                    for j in 0..4 {
                        jtj[(i, j)] += cols[i][0] * cols[j][0] + cols[i][1] * cols[j][1];
                    }
                }
            }
            let step = jtj
                .lu()
                .solve(&(-jtr))
                .ok_or_else(|| DisambigError::RotationFit("singular normal equations".into()))?;
            x += step;
            if step.iter().all(|v| v.abs() < 1e-12) {
                break;
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(DisambigError::RotationFit("diverged".into()));
        }
        let ss: f64 = set.iter().map(|m| (predict(&x, &m.a) - m.b).norm_squared()).sum();
        Ok((x, (ss / set.len() as f64).sqrt()))
    };
    let all: Vec<&Match> = matches.matches.iter().collect();
    let (x0, _) = fit(&all)?;
    let mut residuals: Vec<f64> = all.iter().map(|m| (predict(&x0, &m.a) - m.b).norm()).collect();
    residuals.sort_by(f64::total_cmp);
    let cutoff = (3.0 * 1.4826 * residuals[(residuals.len() - 1) / 2]).max(1.0);
    let kept: Vec<&Match> = all
        .into_iter()
        .filter(|m| (predict(&x0, &m.a) - m.b).norm() <= cutoff)
        .collect();
    let (x, rms) = fit(&kept)?;
    Ok(BackAlignment {
        rotation: Rotation3::from_scaled_axis(Vector3::new(x[0], x[1], x[2])),
        scale: x[3],
        inliers: kept.len(),
        rms,
    })
}

/// Replaces every back point with where a back camera parallel to the left
/// one would have seen it. Distances between back points are then free of
/// the magnification a tilted view introduces.
pub fn derotate_back_points(matches: &MatchSet, alignment: &BackAlignment, f: f64, c: (f64, f64)) -> MatchSet {
    let inverse = alignment.rotation.inverse();
    let mut out = matches.clone();
    for m in &mut out.matches {
        let q = inverse * Vector3::new((m.b.x - c.0) / f, (m.b.y - c.1) / f, 1.0);
        m.b = Point2::new(f * q.x / q.z + c.0, f * q.y / q.z + c.1);
    }
    out
}

/// Detects left-back matches with `matcher`, optionally levels the back
/// points (see [`fit_back_alignment`]), then resolves as in
/// [`remove_ambiguity_with_matches`]. The returned matches are the raw ones.
#[allow(clippy::too_many_arguments)]
pub fn remove_ambiguity(
    left_raw: &GrayImage,
    back: &GrayImage,
    disp: &DisparityMap,
    h_l: &AffineTransform,
    rig: &RigConstants,
    params: &DisambigParams,
    matcher: &dyn FeatureMatcher,
    seed: u64,
) -> Result<(DisparityMap, OffsetEstimateSet, MatchSet), DisambigError> {
    if disp.offset_resolved {
        return Err(DisambigError::AlreadyResolved);
    }
    let matches = matcher.match_images(left_raw, back)?;
    let (resolved, set) = if params.compensate_back_rotation {
        let c = (back.width() as f64 / 2.0, back.height() as f64 / 2.0);
        let alignment = fit_back_alignment(&matches, rig.f, c)?;
        let level = derotate_back_points(&matches, &alignment, rig.f, c);
        remove_ambiguity_with_matches(&level, disp, h_l, rig, params, seed)?
    } else {
        remove_ambiguity_with_matches(&matches, disp, h_l, rig, params, seed)?
    };
    Ok((resolved, set, matches))
}

/// `z = f·C_lr / d`; disparities at or below half a pixel are invalid.
pub fn disparity_to_depth(disp: &DisparityMap, f: f64, c_lr: f64) -> Result<DepthMap, DisambigError> {
    if !disp.offset_resolved {
        return Err(DisambigError::Unresolved);
    }
    let (w, h) = disp.dims();
    let valid = Raster::from_fn(w, h, |x, y| disp.map.valid.get(x, y) && disp.map.values.get(x, y) > 0.5);
    let values = Raster::from_fn(w, h, |x, y| {
        if valid.get(x, y) {
            (f * c_lr / disp.map.values.get(x, y) as f64) as f32
        } else {
            0.0
        }
    });
    Ok(MaskedRaster::new(values, valid))
}
