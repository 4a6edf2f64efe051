//! Affine pseudo-rectification.
//!
//! Two 2×3 affine maps `H_l`, `H_r` are chosen so that corresponding pixels
//! land on the same rectified row. Only the second rows are observable from
//! that condition; they are estimated by RANSAC over a five-unknown
//! homogeneous system. The first rows are then completed so both maps are
//! similarities (and `H_l` a rigid motion), and the horizontal offset of
//! `H_r` is set so that nearly all disparities exceed a protective margin.
//! The remaining global disparity offset is left for [`crate::disambig`].

use nalgebra::{DMatrix, Point2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::features::{Match, MatchSet};
use crate::geometry::AffineTransform;
use crate::raster::{GrayImage, MaskedRaster, Raster};
use crate::seed::derive_indexed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RectifyError {
    #[error("need at least {required} matches, got {found}")]
    NotEnoughMatches { found: usize, required: usize },
    #[error("degenerate sample")]
    DegenerateSample,
    #[error("second row has zero norm")]
    ZeroRow,
    #[error("no inliers to compute the disparity margin")]
    NoInliers,
    #[error("rectification unreliable: inlier ratio {ratio:.3} below {threshold}")]
    Unreliable { ratio: f64, threshold: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Matches drawn per trial.
    pub sample_size: usize,
    pub trials: usize,
    /// Inlier threshold on the rectified row difference, pixels.
    pub epsilon: f64,
    /// Stop once the best inlier ratio exceeds this ...
    pub early_exit_ratio: f64,
    /// ... and this many consecutive trials have not improved on it.
    pub early_exit_patience: usize,
    /// Below this final inlier ratio the result is rejected.
    pub min_inlier_ratio: f64,
    /// Compute the margin over RANSAC inliers rather than all matches.
    pub margin_from_inliers: bool,
    /// Candidates whose rectified rows tilt more than this (radians) from the
    /// image rows are discarded.
    pub max_row_angle: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            sample_size: 10,
            trials: 2000,
            epsilon: 2.0,
            early_exit_ratio: 0.98,
            early_exit_patience: 200,
            min_inlier_ratio: 0.3,
            margin_from_inliers: true,
            max_row_angle: std::f64::consts::FRAC_PI_4,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), RectifyError> {
        if self.sample_size < 5 || self.trials == 0 || !(self.epsilon > 0.0) {
            return Err(RectifyError::InvalidParams(format!(
                "need sample_size >= 5, trials >= 1, epsilon > 0 (got {}, {}, {})",
                self.sample_size, self.trials, self.epsilon
            )));
        }
        Ok(())
    }
}

/// Second rows of the two maps: `H_l[1] = (left[0], left[1], 0)`,
/// `H_r[1] = (right[0], right[1], right[2])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowParams {
    pub left: [f64; 2],
    pub right: [f64; 3],
}

impl RowParams {
    pub fn identity() -> Self {
        Self {
            left: [0.0, 1.0],
            right: [0.0, 1.0, 0.0],
        }
    }

    /// Largest angle between either second row and the image `v` axis.
    pub fn tilt(&self) -> f64 {
        let l = self.left[0].atan2(self.left[1]).abs();
        let r = self.right[0].atan2(self.right[1]).abs();
        l.max(r)
    }

    /// Rectified row difference `v_l' − v_r'` of a match.
    #[inline]
    pub fn residual(&self, m: &Match) -> f64 {
        let l = self.left[0] * m.a.x + self.left[1] * m.a.y;
        let r = self.right[0] * m.b.x + self.right[1] * m.b.y + self.right[2];
        l - r
    }
}

/// Solves the equal-row condition over `sample` in a least-squares sense.
///
/// Coordinates are centred and scaled before the SVD; the solution is the
/// right singular vector of the smallest singular value, rescaled so the left
/// row has unit norm and a positive `v` coefficient.
pub fn solve_row_params(sample: &[Match]) -> Result<RowParams, RectifyError> {
    const UNKNOWNS: usize = 5;
    if sample.len() < UNKNOWNS {
        return Err(RectifyError::DegenerateSample);
    }
    let n = sample.len() as f64;
    let centroid = |pts: &mut dyn Iterator<Item = Point2<f64>>| {
        let (sx, sy) = pts.fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        (sx / n, sy / n)
    };
    let cl = centroid(&mut sample.iter().map(|m| m.a));
    let cr = centroid(&mut sample.iter().map(|m| m.b));
    let spread: f64 = sample
        .iter()
        .map(|m| ((m.a.x - cl.0).hypot(m.a.y - cl.1) + (m.b.x - cr.0).hypot(m.b.y - cr.1)) / 2.0)
        .sum::<f64>()
        / n;
    if !(spread > 1e-12) {
        return Err(RectifyError::DegenerateSample);
    }
    let s = std::f64::consts::SQRT_2 / spread;

    let a = DMatrix::from_fn(sample.len(), UNKNOWNS, |i, j| {
        let m = &sample[i];
        match j {
            0 => s * (m.a.x - cl.0),
            1 => s * (m.a.y - cl.1),
            2 => -s * (m.b.x - cr.0),
            3 => -s * (m.b.y - cr.1),
            _ => -1.0,
        }
    });
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if order.len() < UNKNOWNS || sv(1) <= 1e-10 * sv(UNKNOWNS - 1) {
        return Err(RectifyError::DegenerateSample);
    }
    let x = v_t.row(order[0]);

    let (hl0, hl1) = (s * x[0], s * x[1]);
    let (hr0, hr1) = (s * x[2], s * x[3]);
    let hr2 = x[4] + (hl0 * cl.0 + hl1 * cl.1) - (hr0 * cr.0 + hr1 * cr.1);
    let norm = hl0.hypot(hl1);
    if !(norm > 1e-12) {
        return Err(RectifyError::DegenerateSample);
    }
    let sign = if hl1 < 0.0 { -1.0 } else { 1.0 };
    let k = sign / norm;
    Ok(RowParams {
        left: [hl0 * k, hl1 * k],
        right: [hr0 * k, hr1 * k, hr2 * k],
    })
}

/// Number of matches with `|v_l' − v_r'| < epsilon` (strict).
pub fn count_inliers(rows: &RowParams, matches: &[Match], epsilon: f64) -> usize {
    matches.iter().filter(|m| rows.residual(m).abs() < epsilon).count()
}

fn inlier_flags(rows: &RowParams, matches: &[Match], epsilon: f64) -> Vec<bool> {
    matches.iter().map(|m| rows.residual(m).abs() < epsilon).collect()
}

/// Builds both maps from their second rows: each first row is the
/// same-norm orthogonal completion `(h[1][1], −h[1][0])` with positive
/// determinant; `H_l[0][2] = 0` and `H_r[0][2]` is left at 0 for
/// [`set_disparity_margin`].
pub fn complete_first_rows(rows: &RowParams) -> Result<(AffineTransform, AffineTransform), RectifyError> {
    let [l0, l1] = rows.left;
    let [r0, r1, r2] = rows.right;
    if !(l0.hypot(l1) > 0.0) || !(r0.hypot(r1) > 0.0) {
        return Err(RectifyError::ZeroRow);
    }
    let h_l = AffineTransform::from_rows([l1, -l0, 0.0], [l0, l1, 0.0]);
    let h_r = AffineTransform::from_rows([r1, -r0, 0.0], [r0, r1, r2]);
    Ok((h_l, h_r))
}

/// Linear-interpolation percentile of a sorted slice, `p` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Sets `H_r[0][2]` to the 1st percentile of
/// `⟨H_l[0], x_l⟩ − ⟨H_r[0], x_r⟩ − phi` so that at least 99% of `matches`
/// end up with rectified disparity `u_l' − u_r' ≥ phi`.
pub fn set_disparity_margin(
    h_l: &AffineTransform,
    h_r: &AffineTransform,
    matches: &[Match],
    phi: f64,
) -> Result<AffineTransform, RectifyError> {
    let mut h_r = *h_r;
    h_r.m[(0, 2)] = 0.0;
    let mut values: Vec<f64> = matches
        .iter()
        .map(|m| h_l.apply(m.a.x, m.a.y).0 - h_r.apply(m.b.x, m.b.y).0 - phi)
        .collect();
    values.sort_by(f64::total_cmp);
    h_r.m[(0, 2)] = percentile_sorted(&values, 1.0).ok_or(RectifyError::NoInliers)?;
    Ok(h_r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineRectification {
    pub h_l: AffineTransform,
    pub h_r: AffineTransform,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
    /// RANSAC seed that produced this result.
    pub seed: u64,
    /// Trials actually evaluated before the early exit.
    pub trials_run: usize,
}

impl AffineRectification {
    pub fn rows(&self) -> RowParams {
        RowParams {
            left: [self.h_l.m[(1, 0)], self.h_l.m[(1, 1)]],
            right: [self.h_r.m[(1, 0)], self.h_r.m[(1, 1)], self.h_r.m[(1, 2)]],
        }
    }

    /// Rectified disparity `u_l' − u_r'` of a raw match.
    pub fn disparity(&self, m: &Match) -> f64 {
        self.h_l.apply(m.a.x, m.a.y).0 - self.h_r.apply(m.b.x, m.b.y).0
    }
}

/// RANSAC over the equal-row condition followed by least-squares polish,
/// first-row completion and the disparity margin. Returns the rectification
/// and the matches annotated with inlier flags.
pub fn estimate_rectification(
    matches: &MatchSet,
    params: &RansacParams,
    phi: f64,
    seed: u64,
) -> Result<(AffineRectification, MatchSet), RectifyError> {
    params.validate()?;
    let all = &matches.matches;
    let n = all.len();
    if n < params.sample_size {
        return Err(RectifyError::NotEnoughMatches {
            found: n,
            required: params.sample_size,
        });
    }

    const CHUNK: usize = 200;
    let mut best: Option<(usize, RowParams)> = None;
    let mut since_improvement = 0usize;
    let mut trials_run = 0usize;
    'outer: for start in (0..params.trials).step_by(CHUNK) {
        let end = (start + CHUNK).min(params.trials);
        let results: Vec<Option<(usize, RowParams)>> = (start..end)
            .into_par_iter()
            .map(|trial| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, trial as u64));
                let idx = rand::seq::index::sample(&mut rng, n, params.sample_size);
                let sample: Vec<Match> = idx.iter().map(|i| all[i]).collect();
                let rows = solve_row_params(&sample).ok()?;
                if rows.tilt() > params.max_row_angle {
                    return None;
                }
                Some((count_inliers(&rows, all, params.epsilon), rows))
            })
            .collect();
        for result in results {
            trials_run += 1;
            match (result, best) {
                (Some((count, rows)), None) => {
                    best = Some((count, rows));
                    since_improvement = 0;
                }
                (Some((count, rows)), Some((best_count, _))) if count > best_count => {
                    best = Some((count, rows));
                    since_improvement = 0;
                }
                _ => since_improvement += 1,
            }
            if let Some((count, _)) = best {
                let ratio = count as f64 / n as f64;
                if ratio > params.early_exit_ratio && since_improvement >= params.early_exit_patience {
                    break 'outer;
                }
            }
        }
    }
    let (mut count, mut rows) = best.ok_or(RectifyError::DegenerateSample)?;

    for _ in 0..3 {
        let flags = inlier_flags(&rows, all, params.epsilon);
        let inliers: Vec<Match> = all.iter().zip(&flags).filter(|(_, &f)| f).map(|(m, _)| *m).collect();
        let Ok(polished) = solve_row_params(&inliers) else { break };
        if polished.tilt() > params.max_row_angle {
            break;
        }
        let polished_count = count_inliers(&polished, all, params.epsilon);
        if polished_count < count || polished == rows {
            break;
        }
        count = polished_count;
        rows = polished;
    }

    let ratio = count as f64 / n as f64;
    if ratio < params.min_inlier_ratio {
        return Err(RectifyError::Unreliable {
            ratio,
            threshold: params.min_inlier_ratio,
        });
    }
    let flags = inlier_flags(&rows, all, params.epsilon);
    let (h_l, h_r) = complete_first_rows(&rows)?;
    let margin_set: Vec<Match> = if params.margin_from_inliers {
        all.iter().zip(&flags).filter(|(_, &f)| f).map(|(m, _)| *m).collect()
    } else {
        all.clone()
    };
    let h_r = set_disparity_margin(&h_l, &h_r, &margin_set, phi)?;
    let annotated = MatchSet {
        matches: all.clone(),
        inliers: Some(flags),
    };
    Ok((
        AffineRectification {
            h_l,
            h_r,
            inlier_count: count,
            inlier_ratio: ratio,
            seed,
            trials_run,
        },
        annotated,
    ))
}

/// Inverse-maps every output pixel through `transform` and samples the
/// source bilinearly. Pixels whose preimage leaves the source are invalid.
pub fn warp_affine(img: &GrayImage, transform: &AffineTransform) -> MaskedRaster {
    let inv = transform.inverse().expect("rectifying maps are similarities");
    let (w, h) = img.dims();
    let rows: Vec<(Vec<f32>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut values = Vec::with_capacity(w);
            let mut valid = Vec::with_capacity(w);
            for x in 0..w {
                let (u, v) = inv.apply(x as f64, y as f64);
                match img.sample_bilinear(u, v) {
                    Some(s) => {
                        values.push(s);
                        valid.push(true);
                    }
                    None => {
                        values.push(0.0);
                        valid.push(false);
                    }
                }
            }
            (values, valid)
        })
        .collect();
    let (values, valid): (Vec<Vec<f32>>, Vec<Vec<bool>>) = rows.into_iter().unzip();
    MaskedRaster::new(
        Raster::from_vec(w, h, values.concat()).expect("size"),
        Raster::from_vec(w, h, valid.concat()).expect("size"),
    )
}

#[derive(Debug, Clone)]
pub struct RectifiedPair {
    pub rectification: AffineRectification,
    pub matches: MatchSet,
    pub left: MaskedRaster,
    pub right: MaskedRaster,
}

/// Estimates the rectification from `matches` and warps both images.
pub fn pseudo_rectify(
    left: &GrayImage,
    right: &GrayImage,
    matches: &MatchSet,
    params: &RansacParams,
    phi: f64,
    seed: u64,
) -> Result<RectifiedPair, RectifyError> {
    let (rectification, matches) = estimate_rectification(matches, params, phi, seed)?;
    let (l, r) = rayon::join(
        || warp_affine(left, &rectification.h_l),
        || warp_affine(right, &rectification.h_r),
    );
    Ok(RectifiedPair {
        rectification,
        matches,
        left: l,
        right: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn m(ax: f64, ay: f64, bx: f64, by: f64) -> Match {
        Match {
            a: Point2::new(ax, ay),
            b: Point2::new(bx, by),
            score: 1.0,
        }
    }

    fn random_points(n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (rng.random_range(0.0..1000.0), rng.random_range(0.0..800.0)))
            .collect()
    }

    /// Matches whose preimages under known maps `a_l`, `a_r` share rows.
    fn synth_from_affines(a_l: &AffineTransform, a_r: &AffineTransform, n: usize, seed: u64) -> Vec<Match> {
        let il = a_l.inverse().unwrap();
        let ir = a_r.inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        random_points(n, seed)
            .into_iter()
            .map(|(u, v)| {
                let d = rng.random_range(20.0..80.0);
                let (lx, ly) = il.apply(u, v);
                let (rx, ry) = ir.apply(u - d, v);
                m(lx, ly, rx, ry)
            })
            .collect()
    }

    #[test]
    fn aligned_rows_give_identity() {
        let pts = random_points(20, 1);
        let ms: Vec<Match> = pts.iter().map(|&(u, v)| m(u, v, u - 30.0 - 1e-4 * u * v, v)).collect();
        let rows = solve_row_params(&ms).unwrap();
        assert!(rows.left[0].abs() < 1e-9 && (rows.left[1] - 1.0).abs() < 1e-9);
        assert!(rows.right[0].abs() < 1e-9 && (rows.right[1] - 1.0).abs() < 1e-9 && rows.right[2].abs() < 1e-6);
        assert!(ms.iter().all(|x| rows.residual(x).abs() < 1e-8));
    }

    #[test]
    fn recovers_known_affine_rows() {
        let a_l = AffineTransform::rotation_about(0.03, 500.0, 400.0);
        let a_r = AffineTransform::rotation_about(-0.05, 500.0, 400.0)
            .compose(&AffineTransform::from_rows([1.02, 0.0, 0.0], [0.0, 1.02, 0.0]))
            .compose(&AffineTransform::translation(5.0, -40.0));
        let ms = synth_from_affines(&a_l, &a_r, 30, 2);
        let rows = solve_row_params(&ms).unwrap();
        let norm = a_l.m[(1, 0)].hypot(a_l.m[(1, 1)]);
        assert!((rows.left[0] - a_l.m[(1, 0)] / norm).abs() < 1e-8);
        assert!((rows.left[1] - a_l.m[(1, 1)] / norm).abs() < 1e-8);
        // The left offset is pinned to zero, so the right offset absorbs it.
        let expected = [a_r.m[(1, 0)], a_r.m[(1, 1)], a_r.m[(1, 2)] - a_l.m[(1, 2)]];
        for j in 0..3 {
            assert!((rows.right[j] - expected[j] / norm).abs() < 1e-6, "entry {j}");
        }
        assert!(ms.iter().all(|x| rows.residual(x).abs() < 1e-8));
    }

    #[test]
    fn too_small_or_collinear_sample_is_degenerate() {
        let pts = random_points(4, 3);
        let ms: Vec<Match> = pts.iter().map(|&(u, v)| m(u, v, u, v)).collect();
        assert_eq!(solve_row_params(&ms), Err(RectifyError::DegenerateSample));
        let line: Vec<Match> = (0..10).map(|i| m(i as f64, 2.0 * i as f64, i as f64 + 3.0, 2.0 * i as f64)).collect();
        assert_eq!(solve_row_params(&line), Err(RectifyError::DegenerateSample));
    }

    #[test]
    fn inlier_count_is_strict() {
        let ms: Vec<Match> = [0.5, 1.9, 2.0, 3.1].iter().map(|&dv| m(10.0, 10.0 + dv, 5.0, 10.0)).collect();
        assert_eq!(count_inliers(&RowParams::identity(), &ms, 2.0), 2);
        assert_eq!(count_inliers(&RowParams::identity(), &[], 2.0), 0);
    }

    #[test]
    fn first_row_completion() {
        let rows = RowParams {
            left: [0.0, 1.0],
            right: [0.0, 1.0, 7.0],
        };
        let (h_l, _) = complete_first_rows(&rows).unwrap();
        assert_eq!(h_l.row(0), [1.0, 0.0, 0.0]);

        let t = 17f64.to_radians();
        let rows = RowParams {
            left: [t.sin(), t.cos()],
            right: [1.3 * t.sin(), 1.3 * t.cos(), 2.0],
        };
        let (h_l, h_r) = complete_first_rows(&rows).unwrap();
        assert!(h_l.is_rigid(1e-12));
        assert_eq!(h_l.m[(0, 2)], 0.0);
        assert!((h_l.row(0)[0] - t.cos()).abs() < 1e-15 && (h_l.row(0)[1] + t.sin()).abs() < 1e-15);
        let r0 = h_r.row(0);
        assert!((r0[0].hypot(r0[1]) - 1.3).abs() < 1e-12);
        assert!(h_r.is_similarity(1e-12) && h_r.det() > 0.0);

        let zero = RowParams {
            left: [0.0, 0.0],
            right: [0.0, 1.0, 0.0],
        };
        assert_eq!(complete_first_rows(&zero), Err(RectifyError::ZeroRow));
    }

    #[test]
    fn margin_constant_and_uniform_cases() {
        let id = AffineTransform::identity();
        let ms: Vec<Match> = (0..50).map(|i| m(300.0 + i as f64, 10.0, 80.0 + i as f64, 10.0)).collect();
        let h_r = set_disparity_margin(&id, &id, &ms, 50.0).unwrap();
        assert!((h_r.m[(0, 2)] - 170.0).abs() < 1e-12);

        let n = 1001;
        let ms: Vec<Match> = (0..n).map(|i| m(1000.0, 0.0, 1000.0 - (200.0 + 100.0 * i as f64 / (n - 1) as f64), 0.0)).collect();
        let h_r = set_disparity_margin(&id, &id, &ms, 50.0).unwrap();
        assert!((h_r.m[(0, 2)] - 151.0).abs() < 1e-9);
        let r = AffineRectification {
            h_l: id,
            h_r,
            inlier_count: n,
            inlier_ratio: 1.0,
            seed: 0,
            trials_run: 0,
        };
        let mut d: Vec<f64> = ms.iter().map(|x| r.disparity(x)).collect();
        d.sort_by(f64::total_cmp);
        assert!(d[0] >= 49.0 && d[0] <= 50.0);
        assert!((percentile_sorted(&d, 1.0).unwrap() - 50.0).abs() < 0.5);
        assert_eq!(set_disparity_margin(&id, &id, &[], 50.0), Err(RectifyError::NoInliers));
    }

    #[test]
    fn percentile_matches_linear_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile_sorted(&v, 0.0), Some(1.0));
        assert_eq!(percentile_sorted(&v, 100.0), Some(5.0));
        assert!((percentile_sorted(&v, 10.0).unwrap() - 1.4).abs() < 1e-12);
    }

    fn perturbed_rig_matches(n: usize, outliers: usize, seed: u64) -> Vec<Match> {
        let a_l = AffineTransform::rotation_about(0.02, 500.0, 400.0);
        let a_r = AffineTransform::rotation_about(-0.04, 500.0, 400.0).compose(&AffineTransform::translation(3.0, 25.0));
        let mut ms = synth_from_affines(&a_l, &a_r, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
        for x in ms.iter_mut().take(outliers) {
            x.b.y += rng.random_range(10.0..60.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        ms
    }

    #[test]
    fn ransac_rejects_outliers_and_improves_rows() {
        let ms = perturbed_rig_matches(400, 100, 5);
        let set = MatchSet::new(ms.clone());
        let (r, annotated) = estimate_rectification(&set, &RansacParams::default(), 50.0, 11).unwrap();
        assert_eq!(r.inlier_count, 300);
        assert!((r.inlier_ratio - 0.75).abs() < 1e-12);
        assert!(r.h_l.is_rigid(1e-9));
        assert_eq!(r.h_l.m[(0, 2)], 0.0);
        assert_eq!(r.h_l.m[(1, 2)], 0.0);
        assert!(r.h_l.m[(1, 1)] > 0.0);
        assert!(r.h_r.is_similarity(1e-9) && r.h_r.det() > 0.0);
        let flags = annotated.inliers.unwrap();
        assert!(flags[..100].iter().all(|f| !f) && flags[100..].iter().all(|&f| f));

        let mut before: Vec<f64> = ms[100..].iter().map(|x| (x.a.y - x.b.y).abs()).collect();
        let mut after: Vec<f64> = ms[100..].iter().map(|x| r.rows().residual(x).abs()).collect();
        before.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        assert!(after[after.len() / 2] < before[before.len() / 2]);

        let d: Vec<f64> = ms[100..].iter().map(|x| r.disparity(x)).collect();
        let below = d.iter().filter(|&&x| x < 50.0 - 1e-9).count();
        assert!(below as f64 <= 0.01 * d.len() as f64 + 1.0);
    }

    #[test]
    fn ransac_is_deterministic_and_unreliable_is_reported() {
        let set = MatchSet::new(perturbed_rig_matches(200, 20, 6));
        let p = RansacParams::default();
        let (a, _) = estimate_rectification(&set, &p, 50.0, 3).unwrap();
        let (b, _) = estimate_rectification(&set, &p, 50.0, 3).unwrap();
        assert_eq!(a.h_l.m.as_slice(), b.h_l.m.as_slice());
        assert_eq!(a.h_r.m.as_slice(), b.h_r.m.as_slice());

        let strict = RansacParams {
            min_inlier_ratio: 0.95,
            ..p
        };
        assert!(matches!(
            estimate_rectification(&set, &strict, 50.0, 3),
            Err(RectifyError::Unreliable { .. })
        ));
        let few = MatchSet::new(perturbed_rig_matches(8, 0, 7));
        assert!(matches!(
            estimate_rectification(&few, &p, 50.0, 3),
            Err(RectifyError::NotEnoughMatches { .. })
        ));
    }

    #[test]
    fn ransac_result_independent_of_thread_count() {
        let set = MatchSet::new(perturbed_rig_matches(300, 60, 8));
        let p = RansacParams::default();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_rectification(&set, &p, 50.0, 21).unwrap().0)
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn warp_identity_and_translation() {
        let img = Raster::from_fn(20, 10, |x, y| (x * 3 + y) as f32);
        let same = warp_affine(&img, &AffineTransform::identity());
        assert_eq!(same.values, img);
        assert_eq!(same.valid_count(), 200);
        let moved = warp_affine(&img, &AffineTransform::translation(2.0, 0.0));
        assert!(!moved.valid.get(0, 0) && !moved.valid.get(1, 5));
        assert_eq!(moved.at(5, 3), Some(img.get(3, 3)));
    }

    proptest! {
        #[test]
        fn completed_left_map_is_rigid(theta in -0.5f64..0.5, scale in 0.5f64..2.0, c in -100.0f64..100.0) {
            let rows = RowParams { left: [theta.sin(), theta.cos()], right: [scale * theta.sin(), scale * theta.cos(), c] };
            let (h_l, h_r) = complete_first_rows(&rows).unwrap();
            prop_assert!(h_l.is_rigid(1e-9));
            prop_assert!(h_r.is_similarity(1e-9));
            let (p, q): ((f64, f64), (f64, f64)) = ((3.0, 4.0), (-120.0, 57.5));
            let (a, b) = (h_l.apply(p.0, p.1), h_l.apply(q.0, q.1));
            let d0 = (p.0 - q.0).hypot(p.1 - q.1);
            let d1 = (a.0 - b.0).hypot(a.1 - b.1);
            prop_assert!((d0 - d1).abs() < 1e-9);
        }
    }
}
