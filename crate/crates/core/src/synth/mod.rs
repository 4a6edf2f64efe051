//! Synthetic three-view scenes: a Gaussian height surface textured with
//! value noise, the rig placement protocol, heightfield raycasting with exact
//! ground-truth depth, and sampled (optionally noisy) correspondences.

mod texture;

pub use texture::ValueNoise;

use nalgebra::{Point2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::features::{Match, MatchSet};
use crate::geometry::{rotation_from_euler, Camera, Pose, Rotation, ThreeViewRig};
use crate::raster::{DepthMap, GrayImage, MaskedRaster, Raster};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("only {survivors} correspondences survived ({dropped} dropped); need at least 8")]
    TooFewCorrespondences { survivors: usize, dropped: usize },
}

/// `z = a + b·exp(−(x² + y²) / (2σ²))`, all in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceParams {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

impl SurfaceParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.a > 0.0 && self.b >= 0.0 && self.sigma > 0.0 {
            Ok(())
        } else {
            Err(SynthError::InvalidParams(format!(
                "surface needs a > 0, b >= 0, sigma > 0 (got {self:?})"
            )))
        }
    }
}

#[inline]
pub fn gaussian_height(x: f64, y: f64, params: &SurfaceParams) -> f64 {
    params.a + params.b * (-(x * x + y * y) / (2.0 * params.sigma * params.sigma)).exp()
}

/// Axis-aligned 3D box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn centroid(&self) -> Vector3<f64> {
        (self.min + self.max) / 2.0
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }
}

/// A textured surface patch over the square footprint `|x|, |y| <= footprint_half`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub surface: SurfaceParams,
    pub footprint_half: f64,
    pub texture_seed: u64,
    pub bbox: Aabb,
    /// Bounding-box diagonal length, meters.
    pub diagonal: f64,
}

impl SceneSpec {
    pub fn new(surface: SurfaceParams, footprint_half: f64, texture_seed: u64) -> Result<Self, SynthError> {
        surface.validate()?;
        if !(footprint_half > 0.0) {
            return Err(SynthError::InvalidParams("footprint must be positive".into()));
        }
        // Height is radially decreasing for b >= 0, so extremes sit at the
        // centre and at the footprint corners.
        let r = footprint_half;
        let zmin = gaussian_height(r, r, &surface);
        let zmax = gaussian_height(0.0, 0.0, &surface);
        let bbox = Aabb {
            min: Vector3::new(-r, -r, zmin),
            max: Vector3::new(r, r, zmax),
        };
        Ok(Self {
            surface,
            footprint_half,
            texture_seed,
            bbox,
            diagonal: bbox.diagonal(),
        })
    }

    /// The default desk-scale scene: a 10 m square patch with a 10 m deep
    /// Gaussian dimple, which places the rig roughly 300 m away.
    pub fn desk_default(texture_seed: u64) -> Self {
        Self::new(
            SurfaceParams {
                a: 300.0,
                b: 10.0,
                sigma: 5.0,
            },
            5.0,
            texture_seed,
        )
        .expect("valid defaults")
    }

    #[inline]
    pub fn height(&self, x: f64, y: f64) -> f64 {
        gaussian_height(x, y, &self.surface)
    }

    #[inline]
    pub fn in_footprint(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.footprint_half && y.abs() <= self.footprint_half
    }

    pub fn texture(&self) -> ValueNoise {
        ValueNoise::new(self.texture_seed, self.surface.sigma / 8.0)
    }
}

/// Symmetric uniform ranges (radians) for random Euler perturbations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerRange {
    pub z: f64,
    pub y: f64,
    pub x: f64,
}

impl EulerRange {
    /// x, y in ±1°, z in ±5°.
    pub fn rig_default() -> Self {
        Self {
            z: 5f64.to_radians(),
            y: 1f64.to_radians(),
            x: 1f64.to_radians(),
        }
    }

    pub fn none() -> Self {
        Self { z: 0.0, y: 0.0, x: 0.0 }
    }

    fn sample(&self, rng: &mut impl Rng) -> Rotation {
        let mut draw = |half: f64| rng.random_range(-1.0..=1.0) * half;
        let z = draw(self.z);
        let y = draw(self.y);
        let x = draw(self.x);
        rotation_from_euler(z, y, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigOptions {
    pub right_perturbation: EulerRange,
    pub back_perturbation: EulerRange,
    /// How far the back camera sits above the left one, meters (−y in camera frame).
    pub back_height: f64,
    /// `C_lr = C_lb = baseline_ratio · depth`.
    pub baseline_ratio: f64,
}

impl Default for RigOptions {
    fn default() -> Self {
        Self {
            right_perturbation: EulerRange::rig_default(),
            back_perturbation: EulerRange::rig_default(),
            back_height: 0.0,
            baseline_ratio: 1.0 / 150.0,
        }
    }
}

/// Rig placement with the default perturbation ranges; see [`build_rig_with`].
pub fn build_rig(
    spec: &SceneSpec,
    fov_h: f64,
    width: usize,
    height: usize,
    rot_seed: u64,
) -> Result<ThreeViewRig, SynthError> {
    build_rig_with(spec, fov_h, width, height, rot_seed, &RigOptions::default())
}

/// Places the left camera `S / tan(fov/2)` in front of the bounding-box
/// centroid looking along +z, the right camera `C_lr` along its x-axis, and
/// the back camera `C_lb` behind it; right and back orientations get seeded
/// random Euler perturbations.
pub fn build_rig_with(
    spec: &SceneSpec,
    fov_h: f64,
    width: usize,
    height: usize,
    rot_seed: u64,
    options: &RigOptions,
) -> Result<ThreeViewRig, SynthError> {
    let fov_ok = fov_h > 0.5f64.to_radians() && fov_h < 20f64.to_radians();
    if !fov_ok || width == 0 || height == 0 {
        return Err(SynthError::InvalidParams(format!(
            "fov must lie in (0.5, 20) deg and the image must be non-empty (fov = {:.3} deg, {width}x{height})",
            fov_h.to_degrees()
        )));
    }
    let depth = spec.diagonal / (fov_h / 2.0).tan();
    let baseline = options.baseline_ratio * depth;

    let base = Camera::from_fov(fov_h, width, height);
    let left_pose = Pose {
        rotation: Rotation::identity(),
        center: spec.bbox.centroid() - Vector3::new(0.0, 0.0, depth),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rot_seed);
    let right_rel = options.right_perturbation.sample(&mut rng);
    let back_rel = options.back_perturbation.sample(&mut rng);

    let left_r = *left_pose.rotation.matrix();
    let right_pose = Pose {
        rotation: Rotation::from_matrix(left_r * right_rel.matrix()),
        center: left_pose.center + left_r * Vector3::new(baseline, 0.0, 0.0),
    };
    let back_pose = Pose {
        rotation: Rotation::from_matrix(left_r * back_rel.matrix()),
        center: left_pose.center + left_r * Vector3::new(0.0, -options.back_height, -baseline),
    };
    Ok(ThreeViewRig {
        left: base.with_pose(left_pose),
        right: base.with_pose(right_pose),
        back: base.with_pose(back_pose),
        c_lr: baseline,
        c_lb: baseline,
    })
}

#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: GrayImage,
    pub depth: DepthMap,
    pub camera: Camera,
}

/// Result of intersecting one camera ray with the surface.
#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    pub point: Vector3<f64>,
    /// Camera-frame depth of the hit, meters.
    pub depth: f64,
}

/// Marches the ray through pixel `(u, v)` across the bounding-box slab in
/// steps of σ/50 and refines the first sign change with 40 bisections.
pub fn cast_ray(camera: &Camera, spec: &SceneSpec, u: f64, v: f64) -> Option<RayHit> {
    let origin = camera.center();
    let dir = camera.ray_direction(u, v);
    if dir.z <= 0.0 {
        return None;
    }
    let pad = 1e-6;
    let t_enter = ((spec.bbox.min.z - pad - origin.z) / dir.z).max(0.0);
    let t_exit = (spec.bbox.max.z + pad - origin.z) / dir.z;
    if t_exit <= t_enter {
        return None;
    }
    let gap = |t: f64| {
        let p = origin + dir * t;
        p.z - spec.height(p.x, p.y)
    };
    let step = spec.surface.sigma / 50.0 / dir.norm();
    let mut lo = t_enter;
    if gap(lo) >= 0.0 {
        return None;
    }
    let mut hi = lo;
    loop {
        let next = (hi + step).min(t_exit);
        if gap(next) >= 0.0 {
            lo = hi;
            hi = next;
            break;
        }
        if next >= t_exit {
            return None;
        }
        hi = next;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let point = origin + dir * t;
    spec.in_footprint(point.x, point.y).then_some(RayHit { point, depth: t })
}

/// Raycasts every pixel. Pixels that miss the surface patch get intensity 0
/// and invalid depth.
pub fn render_view(camera: &Camera, spec: &SceneSpec) -> RenderedView {
    let (w, h) = (camera.width, camera.height);
    let texture = spec.texture();
    let rows: Vec<Vec<(f32, Option<f32>)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| match cast_ray(camera, spec, x as f64, y as f64) {
                    Some(hit) => (
                        texture.sample(hit.point.x, hit.point.y, hit.point.z) as f32,
                        Some(hit.depth as f32),
                    ),
                    None => (0.0, None),
                })
                .collect()
        })
        .collect();
    let flat: Vec<(f32, Option<f32>)> = rows.into_iter().flatten().collect();
    let image = Raster::from_vec(w, h, flat.iter().map(|p| p.0).collect()).expect("size");
    let values = Raster::from_vec(w, h, flat.iter().map(|p| p.1.unwrap_or(0.0)).collect()).expect("size");
    let valid = Raster::from_vec(w, h, flat.iter().map(|p| p.1.is_some()).collect()).expect("size");
    RenderedView {
        image,
        depth: MaskedRaster::new(values, valid),
        camera: *camera,
    }
}

/// Renders the left, right and back views of a rig.
pub fn render_rig(rig: &ThreeViewRig, spec: &SceneSpec) -> [RenderedView; 3] {
    [
        render_view(&rig.left, spec),
        render_view(&rig.right, spec),
        render_view(&rig.back, spec),
    ]
}

/// Sampled ground-truth correspondences with their 3D points.
#[derive(Debug, Clone)]
pub struct SampledCorrespondences {
    pub matches: MatchSet,
    pub points: Vec<Vector3<f64>>,
    pub dropped: usize,
}

/// Left/right correspondences; see [`sample_correspondences_between`].
pub fn sample_correspondences(
    spec: &SceneSpec,
    rig: &ThreeViewRig,
    n: usize,
    noise_std: f64,
    seed: u64,
) -> Result<SampledCorrespondences, SynthError> {
    sample_correspondences_between(spec, &rig.left, &rig.right, n, noise_std, seed)
}

/// Samples `n` surface points uniformly over the footprint, projects them into
/// both cameras and perturbs the B-side pixels with i.i.d. Gaussian noise of
/// per-axis standard deviation `noise_std`. Points leaving either image, and
/// A-side near-duplicates (< 0.5 px), are dropped.
pub fn sample_correspondences_between(
    spec: &SceneSpec,
    cam_a: &Camera,
    cam_b: &Camera,
    n: usize,
    noise_std: f64,
    seed: u64,
) -> Result<SampledCorrespondences, SynthError> {
    if n == 0 || !(noise_std >= 0.0) {
        return Err(SynthError::InvalidParams("need n > 0 and noise_std >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    let r = spec.footprint_half;
    let mut matches = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    let mut dropped = 0;
    for _ in 0..n {
        let x = rng.random_range(-r..=r);
        let y = rng.random_range(-r..=r);
        let (nu, nv) = (noise.sample(&mut rng), noise.sample(&mut rng));
        let p = Vector3::new(x, y, spec.height(x, y));
        let (Ok(pa), Ok(pb)) = (cam_a.project_world(&p), cam_b.project_world(&p)) else {
            dropped += 1;
            continue;
        };
        let pb = Point2::new(pb.x + nu, pb.y + nv);
        let duplicate = || {
            matches
                .iter()
                .any(|m: &Match| (m.a.x - pa.x).powi(2) + (m.a.y - pa.y).powi(2) < 0.25)
        };
        if !cam_a.in_image(pa.x, pa.y) || !cam_b.in_image(pb.x, pb.y) || duplicate() {
            dropped += 1;
            continue;
        }
        matches.push(Match {
            a: Point2::new(pa.x, pa.y),
            b: pb,
            score: 1.0,
        });
        points.push(p);
    }
    if matches.len() < 8 {
        return Err(SynthError::TooFewCorrespondences {
            survivors: matches.len(),
            dropped,
        });
    }
    Ok(SampledCorrespondences {
        matches: MatchSet::new(matches),
        points,
        dropped,
    })
}
