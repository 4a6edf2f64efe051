//! NCC patch descriptors, mutual-best matching with a ratio test, and
//! symmetric sub-pixel refinement.

use nalgebra::Point2;
use rayon::prelude::*;

use super::harris::{detect_corners, Corner, HarrisParams};
use super::{FeatureError, Match, MatchSet};
use crate::raster::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatcherParams {
    pub harris: HarrisParams,
    /// Patch half-width; 7 gives 15×15 patches.
    pub patch_radius: usize,
    /// Lowe ratio on descriptor distance `sqrt(2 − 2·ncc)`.
    pub ratio: f64,
    /// Matches with NCC below this are dropped.
    pub min_score: f64,
    /// Optional bound on `|b − a|` in pixels.
    pub max_displacement: Option<f64>,
    /// Half-width of the integer search used for sub-pixel refinement.
    pub refine_radius: usize,
    pub min_matches: usize,
}

impl Default for MatcherParams {
    fn default() -> Self {
        Self {
            harris: HarrisParams::default(),
            patch_radius: 7,
            ratio: 0.9,
            min_score: 0.5,
            max_displacement: None,
            refine_radius: 2,
            min_matches: 30,
        }
    }
}

/// Zero-mean, unit-norm patch centred on an integer pixel, or `None` if the
/// patch leaves the image or is flat.
fn normalized_patch(img: &GrayImage, cx: isize, cy: isize, r: usize) -> Option<Vec<f32>> {
    let r = r as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);
    if cx - r < 0 || cy - r < 0 || cx + r >= w || cy + r >= h {
        return None;
    }
    let mut patch = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    for y in cy - r..=cy + r {
        let row = img.row(y as usize);
        patch.extend_from_slice(&row[(cx - r) as usize..=(cx + r) as usize]);
    }
    let n = patch.len() as f64;
    let mean = patch.iter().map(|&v| v as f64).sum::<f64>() / n;
    let norm = patch.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>().sqrt();
    if norm < 1e-6 {
        return None;
    }
    Some(patch.iter().map(|&v| ((v as f64 - mean) / norm) as f32).collect())
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ncc_at(a: &GrayImage, pa: (isize, isize), b: &GrayImage, pb: (isize, isize), r: usize) -> Option<f64> {
    let da = normalized_patch(a, pa.0, pa.1, r)?;
    let db = normalized_patch(b, pb.0, pb.1, r)?;
    Some(dot(&da, &db) as f64)
}

struct Described {
    corner: Corner,
    descriptor: Vec<f32>,
}

fn describe(img: &GrayImage, params: &MatcherParams) -> Vec<Described> {
    detect_corners(img, &params.harris)
        .into_iter()
        .filter_map(|corner| {
            normalized_patch(img, corner.x as isize, corner.y as isize, params.patch_radius)
                .map(|descriptor| Described { corner, descriptor })
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Best {
    index: usize,
    score: f32,
    second: f32,
}

fn passes_ratio(best: &Best, ratio: f64) -> bool {
    if best.second == f32::NEG_INFINITY {
        return true;
    }
    let dist = |s: f32| (2.0 - 2.0 * s as f64).max(0.0).sqrt();
    dist(best.score) < ratio * dist(best.second)
}

fn best_two(scores: impl Iterator<Item = (usize, f32)>) -> Option<Best> {
    let mut best: Option<Best> = None;
    for (index, s) in scores {
        if s == f32::NEG_INFINITY {
            continue;
        }
        best = Some(match best {
            None => Best {
                index,
                score: s,
                second: f32::NEG_INFINITY,
            },
            Some(b) if s > b.score => Best {
                index,
                score: s,
                second: b.score,
            },
            Some(b) => Best {
                second: b.second.max(s),
                ..b
            },
        });
    }
    best
}

/// Sub-pixel offset of `b` relative to `a` from the symmetrised NCC surface
/// `½[NCC(a, b + s) + NCC(a − s, b)]` over integer shifts `s`. Returns `None`
/// if the surface cannot be evaluated.
fn refine_offset(a: &GrayImage, pa: Corner, b: &GrayImage, pb: Corner, params: &MatcherParams) -> Option<(f64, f64)> {
    let rr = params.refine_radius as isize;
    let side = (2 * rr + 1) as usize;
    let mut surface = vec![f64::NEG_INFINITY; side * side];
    let (ax, ay) = (pa.x as isize, pa.y as isize);
    let (bx, by) = (pb.x as isize, pb.y as isize);
    for sy in -rr..=rr {
        for sx in -rr..=rr {
            let fwd = ncc_at(a, (ax, ay), b, (bx + sx, by + sy), params.patch_radius)?;
            let bwd = ncc_at(a, (ax - sx, ay - sy), b, (bx, by), params.patch_radius)?;
            surface[((sy + rr) as usize) * side + (sx + rr) as usize] = 0.5 * (fwd + bwd);
        }
    }
    let at = |sx: isize, sy: isize| surface[((sy + rr) as usize) * side + (sx + rr) as usize];
    let (mut px, mut py) = (0isize, 0isize);
    for sy in -rr..=rr {
        for sx in -rr..=rr {
            let (v, best) = (at(sx, sy), at(px, py));
            let closer = sx.abs() + sy.abs() < px.abs() + py.abs();
            if v > best || (v == best && closer) {
                px = sx;
                py = sy;
            }
        }
    }
    let vertex = |l: f64, c: f64, r: f64| {
        let denom = (l + r) - 2.0 * c;
        if denom < 0.0 {
            (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let fx = if px.abs() < rr {
        vertex(at(px - 1, py), at(px, py), at(px + 1, py))
    } else {
        0.0
    };
    let fy = if py.abs() < rr {
        vertex(at(px, py - 1), at(px, py), at(px, py + 1))
    } else {
        0.0
    };
    Some((px as f64 + fx, py as f64 + fy))
}

/// Symmetric Gauss-Newton refinement of the offset `s`: the patch of `a`
/// sampled at `pa − s/2 + (I − G/2)·x` is aligned with the patch of `b` at
/// `pb + s/2 + (I + G/2)·x` after removing mean and contrast, where the
/// local deformation `G` absorbs in-plane rotation and scale between the
/// views. Removes the pixel-locking bias of the parabolic fit. Returns `None`
/// if the patch leaves the image, the system is singular, or the offset
/// moves more than 1 px from `s0`.
fn refine_offset_lk(a: &GrayImage, pa: Corner, b: &GrayImage, pb: Corner, s0: (f64, f64), r: usize) -> Option<(f64, f64)> {
    const MAX_ITERS: usize = 15;
    let r = r as isize;
    let n = ((2 * r + 1) * (2 * r + 1)) as usize;
    // Intensity and central-difference gradient at `(u, v)`.
    let sample = |img: &GrayImage, u: f64, v: f64| -> Option<[f64; 3]> {
        let c = img.sample_bilinear(u, v)? as f64;
        let gx = (img.sample_bilinear(u + 1.0, v)? - img.sample_bilinear(u - 1.0, v)?) as f64 / 2.0;
        let gy = (img.sample_bilinear(u, v + 1.0)? - img.sample_bilinear(u, v - 1.0)?) as f64 / 2.0;
        Some([c, gx, gy])
    };
    let normalize = |p: &mut [[f64; 3]]| -> Option<()> {
        let mean = p.iter().map(|q| q[0]).sum::<f64>() / p.len() as f64;
        let norm = p.iter().map(|q| (q[0] - mean).powi(2)).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return None;
        }
        for q in p.iter_mut() {
            *q = [(q[0] - mean) / norm, q[1] / norm, q[2] / norm];
        }
        Some(())
    };
    // params: [s_x, s_y, G_xx, G_xy, G_yx, G_yy]
    let mut params = nalgebra::Vector6::new(s0.0, s0.1, 0.0, 0.0, 0.0, 0.0);
    let mut pa_patch = vec![[0.0; 3]; n];
    let mut pb_patch = vec![[0.0; 3]; n];
    for _ in 0..MAX_ITERS {
        let (sx, sy) = (params[0], params[1]);
        let (gxx, gxy, gyx, gyy) = (params[2] / 2.0, params[3] / 2.0, params[4] / 2.0, params[5] / 2.0);
        let mut k = 0;
        for j in -r..=r {
            for i in -r..=r {
                let (fi, fj) = (i as f64, j as f64);
                let (wx, wy) = (gxx * fi + gxy * fj, gyx * fi + gyy * fj);
                pa_patch[k] = sample(a, pa.x as f64 - sx / 2.0 + fi - wx, pa.y as f64 - sy / 2.0 + fj - wy)?;
                pb_patch[k] = sample(b, pb.x as f64 + sx / 2.0 + fi + wx, pb.y as f64 + sy / 2.0 + fj + wy)?;
                k += 1;
            }
        }
        normalize(&mut pa_patch)?;
        normalize(&mut pb_patch)?;
        let mut h = nalgebra::Matrix6::<f64>::zeros();
        let mut g = nalgebra::Vector6::<f64>::zeros();
        let mut k = 0;
        for j in -r..=r {
            for i in -r..=r {
                let (p, q) = (pa_patch[k], pb_patch[k]);
                k += 1;
                let e = q[0] - p[0];
                let jx = 0.5 * (q[1] + p[1]);
                let jy = 0.5 * (q[2] + p[2]);
                let (fi, fj) = (i as f64, j as f64);
                let row = nalgebra::Vector6::new(jx, jy, jx * fi, jx * fj, jy * fi, jy * fj);
                h += row * row.transpose();
                g += row * e;
            }
        }
        let step = h.lu().solve(&(-g))?;
        if !step.iter().all(|v| v.is_finite()) {
            return None;
        }
        params += step;
        if (params[0] - s0.0).hypot(params[1] - s0.1) > 1.0 {
            return None;
        }
        if step[0].hypot(step[1]) < 1e-4 {
            break;
        }
    }
    Some((params[0], params[1]))
}

/// Harris + NCC matching of `a` against `b`. The result is symmetric in its
/// inputs: swapping the images swaps the sides of every match.
pub fn detect_and_match(a: &GrayImage, b: &GrayImage, params: &MatcherParams) -> Result<MatchSet, FeatureError> {
    const MIN_SIDE: usize = 64;
    for img in [a, b] {
        if img.width() < MIN_SIDE || img.height() < MIN_SIDE {
            return Err(FeatureError::ImageTooSmall {
                width: img.width(),
                height: img.height(),
            });
        }
    }
    let da = describe(a, params);
    let db = describe(b, params);
    let (na, nb) = (da.len(), db.len());

    let too_far = |p: &Corner, q: &Corner| match params.max_displacement {
        Some(limit) => {
            let dx = p.x as f64 - q.x as f64;
            let dy = p.y as f64 - q.y as f64;
            dx * dx + dy * dy > limit * limit
        }
        None => false,
    };
    let scores: Vec<f32> = da
        .par_iter()
        .flat_map_iter(|pa| {
            db.iter().map(move |pb| {
                if too_far(&pa.corner, &pb.corner) {
                    f32::NEG_INFINITY
                } else {
                    dot(&pa.descriptor, &pb.descriptor)
                }
            })
        })
        .collect();

    let row_best: Vec<Option<Best>> = (0..na)
        .into_par_iter()
        .map(|i| best_two(scores[i * nb..(i + 1) * nb].iter().copied().enumerate()))
        .collect();
    let col_best: Vec<Option<Best>> = (0..nb)
        .into_par_iter()
        .map(|j| best_two((0..na).map(|i| (i, scores[i * nb + j]))))
        .collect();

    let pairs: Vec<(usize, usize, f32)> = row_best
        .iter()
        .enumerate()
        .filter_map(|(i, rb)| {
            let rb = (*rb)?;
            let cb = col_best[rb.index]?;
            let ok = cb.index == i
                && rb.score as f64 >= params.min_score
                && passes_ratio(&rb, params.ratio)
                && passes_ratio(&cb, params.ratio);
            ok.then_some((i, rb.index, rb.score))
        })
        .collect();

    let mut matches: Vec<Match> = pairs
        .par_iter()
        .filter_map(|&(i, j, score)| {
            let (ca, cb) = (da[i].corner, db[j].corner);
            let coarse = refine_offset(a, ca, b, cb, params)?;
            let (dx, dy) = refine_offset_lk(a, ca, b, cb, coarse, params.patch_radius).unwrap_or(coarse);
            Some(Match {
                a: Point2::new(ca.x as f64 - dx / 2.0, ca.y as f64 - dy / 2.0),
                b: Point2::new(cb.x as f64 + dx / 2.0, cb.y as f64 + dy / 2.0),
                score: score as f64,
            })
        })
        .collect();
    matches.sort_by(|p, q| {
        q.score
            .total_cmp(&p.score)
            .then(p.a.y.total_cmp(&q.a.y))
            .then(p.a.x.total_cmp(&q.a.x))
    });
    if matches.len() < params.min_matches {
        return Err(FeatureError::InsufficientMatches {
            found: matches.len(),
            required: params.min_matches,
        });
    }
    Ok(MatchSet::new(matches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use crate::synth::ValueNoise;

    fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
        let noise = ValueNoise::new(seed, 6.0);
        Raster::from_fn(w, h, |x, y| noise.sample(x as f64, y as f64, 0.0) as f32)
    }

    fn shifted(img: &GrayImage, du: isize, dv: isize) -> GrayImage {
        let (w, h) = img.dims();
        Raster::from_fn(w, h, |x, y| {
            let sx = (x as isize - du).clamp(0, w as isize - 1) as usize;
            let sy = (y as isize - dv).clamp(0, h as isize - 1) as usize;
            img.get(sx, sy)
        })
    }

    #[test]
    fn self_match_is_exact() {
        let img = textured(160, 120, 1);
        let m = detect_and_match(&img, &img, &MatcherParams::default()).unwrap();
        assert!(m.len() >= 30);
        for p in &m.matches {
            assert_eq!(p.a, p.b);
        }
    }

    #[test]
    fn integer_shift_is_recovered() {
        let img = textured(200, 160, 2);
        let (du, dv) = (7isize, -4isize);
        let moved = shifted(&img, du, dv);
        let m = detect_and_match(&img, &moved, &MatcherParams::default()).unwrap();
        let good = m
            .matches
            .iter()
            .filter(|p| ((p.b.x - p.a.x) - du as f64).abs() <= 0.5 && ((p.b.y - p.a.y) - dv as f64).abs() <= 0.5)
            .count();
        assert!(good as f64 >= 0.9 * m.len() as f64, "{good} of {}", m.len());
    }

    #[test]
    fn fractional_shift_is_recovered_within_005_px() {
        let noise = ValueNoise::new(6, 6.0);
        let (w, h) = (200, 160);
        let (du, dv) = (2.3, -1.6);
        let img = Raster::from_fn(w, h, |x, y| noise.sample(x as f64, y as f64, 0.0) as f32);
        let moved = Raster::from_fn(w, h, |x, y| noise.sample(x as f64 - du, y as f64 - dv, 0.0) as f32);
        let m = detect_and_match(&img, &moved, &MatcherParams::default()).unwrap();
        let mut errs: Vec<f64> = m
            .matches
            .iter()
            .map(|p| ((p.b.x - p.a.x) - du).hypot((p.b.y - p.a.y) - dv))
            .collect();
        errs.sort_by(f64::total_cmp);
        let median = errs[errs.len() / 2];
        assert!(median < 0.05, "median error {median}");
    }

    #[test]
    fn swapping_inputs_swaps_sides() {
        let img = textured(180, 140, 3);
        let other = shifted(&textured(180, 140, 3), 3, 1);
        let p = MatcherParams::default();
        let ab = detect_and_match(&img, &other, &p).unwrap();
        let ba = detect_and_match(&other, &img, &p).unwrap();
        let key = |a: Point2<f64>, b: Point2<f64>| (a.x.to_bits(), a.y.to_bits(), b.x.to_bits(), b.y.to_bits());
        let mut s1: Vec<_> = ab.matches.iter().map(|m| key(m.a, m.b)).collect();
        let mut s2: Vec<_> = ba.matches.iter().map(|m| key(m.b, m.a)).collect();
        s1.sort();
        s2.sort();
        assert_eq!(s1, s2);
    }

    #[test]
    fn sorted_and_deterministic() {
        let img = textured(160, 120, 4);
        let other = shifted(&img, 2, 2);
        let p = MatcherParams::default();
        let m = detect_and_match(&img, &other, &p).unwrap();
        assert_eq!(m, detect_and_match(&img, &other, &p).unwrap());
        for w in m.matches.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn flat_images_fail() {
        let flat = Raster::filled(100, 100, 0.3f32);
        assert!(matches!(
            detect_and_match(&flat, &flat, &MatcherParams::default()),
            Err(FeatureError::InsufficientMatches { .. })
        ));
        let tiny = Raster::filled(32, 100, 0.3f32);
        assert!(matches!(
            detect_and_match(&tiny, &tiny, &MatcherParams::default()),
            Err(FeatureError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn ratio_test_on_distances() {
        let b = Best {
            index: 0,
            score: 0.99,
            second: 0.989,
        };
        assert!(!passes_ratio(&b, 0.9));
        let b = Best { second: 0.5, ..b };
        assert!(passes_ratio(&b, 0.9));
    }
}
