//! Two-view structure from motion on the Gaussian surface, used to show how
//! a tiny baseline lets a rotation about the camera y-axis trade off against
//! depth (the bas-relief ambiguity).
//!
//! Relative pose convention: `X_right = R · X_left + t`, so the essential
//! matrix is `E = [t]× R` and `x_rᵀ E x_l = 0` for calibrated points.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Point2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::disambig::lower_median;
use crate::features::{Match, MatchSet};
use crate::geometry::{Camera, Pose, Rotation};
use crate::seed::{derive_indexed, derive_seed};
use crate::synth::{gaussian_height, SurfaceParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SfmError {
    #[error("need at least 8 correspondences, got {0}")]
    TooFewMatches(usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("cheirality tie: {best} points in front for two decompositions")]
    CheiralityTie { best: usize },
    #[error("could not sample {wanted} visible surface points")]
    SamplingFailed { wanted: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Essential matrix of a relative pose.
pub fn essential_from_pose(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix3<f64> {
    skew(t) * r
}

fn calibrated(p: &Point2<f64>, k_inv: &Matrix3<f64>) -> Vector3<f64> {
    k_inv * Vector3::new(p.x, p.y, 1.0)
}

/// Centroid-and-scale normalizing transform for homogeneous 2D points.
fn normalizer(pts: &[Vector3<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let (cx, cy) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    let (cx, cy) = (cx / n, cy / n);
    let mean_dist = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Normalized 8-point estimate from matches (A = left, B = right) and the
/// shared intrinsics `k`. The result has singular values `(1, 1, 0)`.
pub fn estimate_essential(matches: &MatchSet, k: &Matrix3<f64>) -> Result<Matrix3<f64>, SfmError> {
    essential_from_matches(&matches.matches, k)
}

fn essential_from_matches(matches: &[Match], k: &Matrix3<f64>) -> Result<Matrix3<f64>, SfmError> {
    if matches.len() < 8 {
        return Err(SfmError::TooFewMatches(matches.len()));
    }
    let k_inv = k.try_inverse().ok_or(SfmError::Degenerate("singular intrinsics"))?;
    let left: Vec<Vector3<f64>> = matches.iter().map(|m| calibrated(&m.a, &k_inv)).collect();
    let right: Vec<Vector3<f64>> = matches.iter().map(|m| calibrated(&m.b, &k_inv)).collect();
    let tl = normalizer(&left);
    let tr = normalizer(&right);
    // Zero rows pad a minimal sample so the SVD still yields all 9 right vectors.
    let a = DMatrix::from_fn(matches.len().max(9), 9, |i, j| {
        if i >= matches.len() {
            return 0.0;
        }
        let l = tl * left[i];
        let r = tr * right[i];
        r[j / 3] * l[j % 3]
    });
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    if order.len() < 9 {
        return Err(SfmError::Degenerate("fewer than 9 independent equations"));
    }
    let sv = |i: usize| svd.singular_values[order[i]];
    if sv(1) <= 1e-12 * sv(8) {
        return Err(SfmError::Degenerate("rank-deficient epipolar system"));
    }
    let e_vec = v_t.row(order[0]);
    let e_n = Matrix3::from_fn(|i, j| e_vec[3 * i + j]);
    let e = tr.transpose() * e_n * tl;
    let svd = e.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested V"));
    let mut s = svd.singular_values;
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    s[idx[0]] = 1.0;
    s[idx[1]] = 1.0;
    s[idx[2]] = 0.0;
    let projected = u * Matrix3::from_diagonal(&s) * v_t;
    Ok(projected)
}

/// First-order geometric error of a calibrated correspondence.
pub fn sampson_distance(e: &Matrix3<f64>, xl: &Vector3<f64>, xr: &Vector3<f64>) -> f64 {
    let el = e * xl;
    let er = e.transpose() * xr;
    let num = xr.dot(&el);
    let den = el.x * el.x + el.y * el.y + er.x * er.x + er.y * er.y;
    if den > 0.0 {
        num * num / den
    } else {
        f64::INFINITY
    }
}

fn sampson_residuals(e: &Matrix3<f64>, pts: &[(Vector3<f64>, Vector3<f64>)], out: &mut [f64]) {
    for ((l, r), o) in pts.iter().zip(out.iter_mut()) {
        let el = e * l;
        let er = e.transpose() * r;
        let den = (el.x * el.x + el.y * el.y + er.x * er.x + er.y * er.y).sqrt();
        *o = if den > 0.0 { r.dot(&el) / den } else { 0.0 };
    }
}

fn essential_from_factors(u: &Matrix3<f64>, v: &Matrix3<f64>, delta: &[f64]) -> Matrix3<f64> {
    let du = nalgebra::Rotation3::new(Vector3::new(delta[0], delta[1], delta[2]));
    let dv = nalgebra::Rotation3::new(Vector3::new(delta[3], delta[4], delta[5]));
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
    (du.matrix() * u) * d * (dv.matrix() * v).transpose()
}

/// Levenberg-Marquardt on the summed squared Sampson distance, keeping `e`
/// on the essential manifold through `E = U diag(1,1,0) Vᵀ` with `U`, `V`
/// updated by small rotations.
pub fn refine_essential(e: &Matrix3<f64>, matches: &MatchSet, k: &Matrix3<f64>) -> Result<Matrix3<f64>, SfmError> {
    let k_inv = k.try_inverse().ok_or(SfmError::Degenerate("singular intrinsics"))?;
    let pts: Vec<(Vector3<f64>, Vector3<f64>)> = matches
        .matches
        .iter()
        .map(|m| (calibrated(&m.a, &k_inv), calibrated(&m.b, &k_inv)))
        .collect();
    let n = pts.len();
    if n < 8 {
        return Err(SfmError::TooFewMatches(n));
    }
    let svd = e.svd(true, true);
    let (mut u, mut v) = (svd.u.expect("requested U"), svd.v_t.expect("requested V").transpose());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let permute = Matrix3::from_fn(|i, j| if order[j] == i { 1.0 } else { 0.0 });
    u *= permute;
    v *= permute;

    let zero = [0.0; 6];
    let mut r = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    sampson_residuals(&essential_from_factors(&u, &v, &zero), &pts, &mut r);
    let mut cost: f64 = r.iter().map(|x| x * x).sum();
    let mut lambda = 1e-3;
    let h = 1e-7;
    for _ in 0..100 {
        let mut jac = DMatrix::<f64>::zeros(n, 6);
        for p in 0..6 {
            let mut d = zero;
            d[p] = h;
            sampson_residuals(&essential_from_factors(&u, &v, &d), &pts, &mut plus);
            d[p] = -h;
            sampson_residuals(&essential_from_factors(&u, &v, &d), &pts, &mut minus);
            for i in 0..n {
                jac[(i, p)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * nalgebra::DVector::from_column_slice(&r);
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for p in 0..6 {
                a[(p, p)] += lambda * (jtj[(p, p)] + 1e-30);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let delta: Vec<f64> = step.iter().copied().collect();
            let candidate = essential_from_factors(&u, &v, &delta);
            sampson_residuals(&candidate, &pts, &mut trial);
            let new_cost: f64 = trial.iter().map(|x| x * x).sum();
            if new_cost < cost {
                let du = nalgebra::Rotation3::new(Vector3::new(delta[0], delta[1], delta[2]));
                let dv = nalgebra::Rotation3::new(Vector3::new(delta[3], delta[4], delta[5]));
                u = du.matrix() * u;
                v = dv.matrix() * v;
                let gain = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                cost = new_cost;
                std::mem::swap(&mut r, &mut trial);
                lambda = (lambda / 10.0).max(1e-12);
                improved = gain > 1e-12;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(essential_from_factors(&u, &v, &zero))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialRansacParams {
    pub trials: usize,
    /// Squared Sampson threshold in normalized image units.
    pub threshold: f64,
}

impl Default for EssentialRansacParams {
    fn default() -> Self {
        Self {
            trials: 500,
            threshold: 1e-4,
        }
    }
}

/// 8-point RANSAC followed by a refit on the inliers of the best trial.
pub fn estimate_essential_ransac(
    matches: &MatchSet,
    k: &Matrix3<f64>,
    params: &EssentialRansacParams,
    seed: u64,
) -> Result<(Matrix3<f64>, Vec<bool>), SfmError> {
    let ms = &matches.matches;
    if ms.len() < 8 {
        return Err(SfmError::TooFewMatches(ms.len()));
    }
    let k_inv = k.try_inverse().ok_or(SfmError::Degenerate("singular intrinsics"))?;
    let pts: Vec<(Vector3<f64>, Vector3<f64>)> = ms
        .iter()
        .map(|m| (calibrated(&m.a, &k_inv), calibrated(&m.b, &k_inv)))
        .collect();
    let flags = |e: &Matrix3<f64>| -> Vec<bool> {
        pts.iter()
            .map(|(l, r)| sampson_distance(e, l, r) < params.threshold)
            .collect()
    };
    let trials: Vec<Option<(usize, Matrix3<f64>)>> = (0..params.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, trial as u64));
            let idx = rand::seq::index::sample(&mut rng, ms.len(), 8);
            let sample: Vec<Match> = idx.iter().map(|i| ms[i]).collect();
            let e = essential_from_matches(&sample, k).ok()?;
            Some((flags(&e).iter().filter(|&&f| f).count(), e))
        })
        .collect();
    let mut best: Option<(usize, Matrix3<f64>)> = None;
    for (count, e) in trials.into_iter().flatten() {
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, e));
        }
    }
    let (_, e) = best.ok_or(SfmError::Degenerate("every RANSAC sample was degenerate"))?;
    let inliers = flags(&e);
    let kept: Vec<Match> = ms.iter().zip(&inliers).filter(|(_, &f)| f).map(|(m, _)| *m).collect();
    let refit = essential_from_matches(&kept, k)?;
    let inliers = flags(&refit);
    Ok((refit, inliers))
}

/// Linear (DLT) triangulation from two 3×4 projection matrices acting on
/// calibrated coordinates.
pub fn triangulate(p_l: &Matrix3x4<f64>, p_r: &Matrix3x4<f64>, xl: &Vector3<f64>, xr: &Vector3<f64>) -> Vector3<f64> {
    let mut a = nalgebra::Matrix4::zeros();
    for (row, (p, x)) in [(p_l, xl), (p_l, xl), (p_r, xr), (p_r, xr)].into_iter().enumerate() {
        let (coord, k) = if row % 2 == 0 { (x.x / x.z, 0) } else { (x.y / x.z, 1) };
        let r = p.row(2) * coord - p.row(k);
        a.set_row(row, &r);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let i = (0..4)
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .expect("four singular values");
    let h = v_t.row(i);
    Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3])
}

fn projection(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix3x4<f64> {
    let mut p = Matrix3x4::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    p.set_column(3, t);
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoViewReconstruction {
    /// Relative rotation `R` of `X_r = R X_l + t`.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Points in the left camera frame.
    pub points: Vec<Vector3<f64>>,
}

/// Four-way decomposition of `e`, choosing the branch with the most points in
/// front of both cameras, then triangulation with `‖t‖ = baseline`.
pub fn decompose_and_triangulate(
    e: &Matrix3<f64>,
    matches: &MatchSet,
    k: &Matrix3<f64>,
    baseline: f64,
) -> Result<TwoViewReconstruction, SfmError> {
    let k_inv = k.try_inverse().ok_or(SfmError::Degenerate("singular intrinsics"))?;
    let pts: Vec<(Vector3<f64>, Vector3<f64>)> = matches
        .matches
        .iter()
        .map(|m| (calibrated(&m.a, &k_inv), calibrated(&m.b, &k_inv)))
        .collect();
    let svd = e.svd(true, true);
    let (mut u, mut v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested V"));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let permute = Matrix3::from_fn(|i, j| if order[j] == i { 1.0 } else { 0.0 });
    u *= permute;
    v_t = permute.transpose() * v_t;
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t_dir: Vector3<f64> = u.column(2).into();
    let candidates = [
        (u * w * v_t, t_dir),
        (u * w * v_t, -t_dir),
        (u * w.transpose() * v_t, t_dir),
        (u * w.transpose() * v_t, -t_dir),
    ];
    let p_l = projection(&Matrix3::identity(), &Vector3::zeros());
    let mut scored: Vec<(usize, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, (r, t))| {
            let p_r = projection(r, t);
            let front = pts
                .iter()
                .filter(|(l, rr)| {
                    let x = triangulate(&p_l, &p_r, l, rr);
                    x.z > 0.0 && (r * x + t).z > 0.0
                })
                .count();
            (front, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    if scored[0].0 == scored[1].0 {
        return Err(SfmError::CheiralityTie { best: scored[0].0 });
    }
    let (r, t) = candidates[scored[0].1];
    let t = t.normalize() * baseline;
    let p_r = projection(&r, &t);
    let points = pts.iter().map(|(l, rr)| triangulate(&p_l, &p_r, l, rr)).collect();
    Ok(TwoViewReconstruction {
        rotation: r,
        translation: t,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfmSimConfig {
    pub surface: SurfaceParams,
    pub n_points: usize,
    /// Per-axis standard deviation of the right-view pixel noise.
    pub noise_std: f64,
    pub width: usize,
    pub height: usize,
    pub fov_h: f64,
    /// Right camera centre in the left camera frame, meters.
    pub baseline: Vector3<f64>,
    pub runs: usize,
    pub seed: u64,
    /// Points are drawn uniformly from a disc of this many σ in radius.
    pub sample_radius_sigmas: f64,
    /// Wrap the 8-point solver in RANSAC.
    pub ransac: bool,
}

impl Default for SfmSimConfig {
    fn default() -> Self {
        Self {
            surface: SurfaceParams {
                a: 300.0,
                b: 300.0,
                sigma: 10.0,
            },
            n_points: 1500,
            noise_std: std::f64::consts::FRAC_1_SQRT_2,
            width: 4608,
            height: 3456,
            fov_h: 6f64.to_radians(),
            baseline: Vector3::new(2.0, 0.0, 0.0),
            runs: 20,
            seed: 0,
            sample_radius_sigmas: 3.0,
            ransac: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfmRun {
    /// Signed Euler errors of the recovered right-camera orientation, degrees (x, y, z).
    pub rotation_error_deg: [f64; 3],
    pub translation_error_deg: f64,
    pub point_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfmSimReport {
    pub runs: Vec<SfmRun>,
    pub failures: usize,
    /// Medians over runs of the absolute Euler errors, degrees (x, y, z).
    pub median_abs_rotation_error_deg: [f64; 3],
    pub median_translation_error_deg: f64,
    pub median_point_rmse: f64,
}

/// Surface points visible in both cameras, drawn uniformly over a disc.
fn sample_visible_points(
    config: &SfmSimConfig,
    left: &Camera,
    right: &Camera,
    rng: &mut impl Rng,
) -> Result<Vec<Vector3<f64>>, SfmError> {
    let radius = config.sample_radius_sigmas * config.surface.sigma;
    let mut points = Vec::with_capacity(config.n_points);
    let max_attempts = 1000 * config.n_points.max(1);
    for _ in 0..max_attempts {
        if points.len() == config.n_points {
            break;
        }
        let x = rng.random_range(-radius..=radius);
        let y = rng.random_range(-radius..=radius);
        if x * x + y * y > radius * radius {
            continue;
        }
        let p = Vector3::new(x, y, gaussian_height(x, y, &config.surface));
        let visible = |cam: &Camera| cam.project_world(&p).is_ok_and(|q| cam.in_image(q.x, q.y));
        if visible(left) && visible(right) {
            points.push(p);
        }
    }
    if points.len() < config.n_points {
        return Err(SfmError::SamplingFailed {
            wanted: config.n_points,
        });
    }
    Ok(points)
}

fn simulate_run(config: &SfmSimConfig, seed: u64) -> Result<SfmRun, SfmError> {
    let left = Camera::from_fov(config.fov_h, config.width, config.height);
    let right = left.with_pose(Pose {
        rotation: Rotation::identity(),
        center: config.baseline,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = sample_visible_points(config, &left, &right, &mut rng)?;
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| SfmError::InvalidConfig(e.to_string()))?;
    let matches: Vec<Match> = points
        .iter()
        .map(|p| {
            let a = left.project_world(p).expect("visible");
            let b = right.project_world(p).expect("visible");
            let (nu, nv) = (noise.sample(&mut rng), noise.sample(&mut rng));
            Match {
                a: Point2::new(a.x, a.y),
                b: Point2::new(b.x + nu, b.y + nv),
                score: 1.0,
            }
        })
        .collect();
    let set = MatchSet::new(matches);
    let k = left.intrinsics();
    let e = if config.ransac {
        let (e, inliers) =
            estimate_essential_ransac(&set, &k, &EssentialRansacParams::default(), derive_seed(seed, "essential"))?;
        let kept = set.matches.iter().zip(&inliers).filter(|(_, &f)| f).map(|(m, _)| *m).collect();
        refine_essential(&e, &MatchSet::new(kept), &k)?
    } else {
        refine_essential(&estimate_essential(&set, &k)?, &set, &k)?
    };
    let recon = decompose_and_triangulate(&e, &set, &k, config.baseline.norm())?;

    let r_gt = right.pose.rotation.matrix().transpose() * left.pose.rotation.matrix();
    let t_gt = right.pose.world_to_camera(&left.center());
    // Orientation of the right camera expressed as a camera-to-left rotation.
    let est = Rotation::from_matrix(recon.rotation.transpose());
    let gt = Rotation::from_matrix(r_gt.transpose());
    let err = Rotation::from_matrix(est.matrix() * gt.matrix().transpose());
    let cos_t = (recon.translation.normalize().dot(&t_gt.normalize())).clamp(-1.0, 1.0);
    let sq: f64 = recon
        .points
        .iter()
        .zip(&points)
        .map(|(p, g)| (p - left.pose.world_to_camera(g)).norm_squared())
        .sum();
    Ok(SfmRun {
        rotation_error_deg: [err.euler_x.to_degrees(), err.euler_y.to_degrees(), err.euler_z.to_degrees()],
        translation_error_deg: cos_t.acos().to_degrees(),
        point_rmse: (sq / points.len() as f64).sqrt(),
    })
}

/// Runs `config.runs` independent simulations (run `i` seeded from
/// `config.seed` and `i`) and reports medians over the successful ones.
pub fn simulate_two_view_sfm(config: &SfmSimConfig) -> Result<SfmSimReport, SfmError> {
    if config.n_points < 8 || !(config.noise_std >= 0.0) || config.runs == 0 {
        return Err(SfmError::InvalidConfig(format!(
            "need n_points >= 8, noise_std >= 0, runs >= 1 (got {}, {}, {})",
            config.n_points, config.noise_std, config.runs
        )));
    }
    let results: Vec<Result<SfmRun, SfmError>> = (0..config.runs)
        .into_par_iter()
        .map(|i| simulate_run(config, derive_indexed(config.seed, i as u64)))
        .collect();
    let failures = results.iter().filter(|r| r.is_err()).count();
    let runs: Vec<SfmRun> = results.into_iter().filter_map(Result::ok).collect();
    if runs.is_empty() {
        return Err(SfmError::Degenerate("every run failed"));
    }
    let med = |f: &dyn Fn(&SfmRun) -> f64| lower_median(&runs.iter().map(f).collect::<Vec<_>>()).expect("non-empty");
    Ok(SfmSimReport {
        median_abs_rotation_error_deg: [
            med(&|r| r.rotation_error_deg[0].abs()),
            med(&|r| r.rotation_error_deg[1].abs()),
            med(&|r| r.rotation_error_deg[2].abs()),
        ],
        median_translation_error_deg: med(&|r| r.translation_error_deg),
        median_point_rmse: med(&|r| r.point_rmse),
        runs,
        failures,
    })
}
