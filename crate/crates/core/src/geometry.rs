//! Pinhole cameras, Euler rotations, 2×3 affine maps and the small-rotation
//! affine approximation of rotation homographies.
//!
//! Conventions used throughout the crate:
//!
//! * Rotations are composed as `R = R_z(alpha) · R_y(beta) · R_x(gamma)`.
//! * A camera pose stores the camera-to-world rotation and the camera centre,
//!   so `X_world = R · X_cam + C` and `X_cam = Rᵀ · (X_world − C)`.
//! * Pixel coordinates are continuous, origin at the top-left pixel centre,
//!   `u` = column, `v` = row. The camera looks along its +z axis.

use nalgebra::{DMatrix, Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("rotation outside the small-angle regime: {0}")]
    OutsideSmallAngleRegime(String),
    #[error("degenerate point grid: {0}")]
    DegenerateGrid(&'static str),
    #[error("affine transform is not invertible")]
    Singular,
}

/// A 3D rotation with its `z-y-x` Euler decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    /// Rotation about z, radians.
    pub euler_z: f64,
    /// Rotation about y, radians.
    pub euler_y: f64,
    /// Rotation about x, radians.
    pub euler_x: f64,
    matrix: Matrix3<f64>,
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Builds `R_z(alpha) · R_y(beta) · R_x(gamma)`.
pub fn rotation_from_euler(alpha: f64, beta: f64, gamma: f64) -> Rotation {
    Rotation {
        euler_z: alpha,
        euler_y: beta,
        euler_x: gamma,
        matrix: rot_z(alpha) * rot_y(beta) * rot_x(gamma),
    }
}

impl Rotation {
    pub fn identity() -> Self {
        rotation_from_euler(0.0, 0.0, 0.0)
    }

    /// Decomposes an orthonormal matrix into `z-y-x` Euler angles.
    ///
    /// `beta` is taken in `[-pi/2, pi/2]`; at gimbal lock `gamma` is set to zero.
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        let sb = (-m[(2, 0)]).clamp(-1.0, 1.0);
        let beta = sb.asin();
        let (alpha, gamma) = if sb.abs() < 1.0 - 1e-12 {
            (m[(1, 0)].atan2(m[(0, 0)]), m[(2, 1)].atan2(m[(2, 2)]))
        } else {
            ((-m[(0, 1)]).atan2(m[(1, 1)]), 0.0)
        };
        Rotation {
            euler_z: alpha,
            euler_y: beta,
            euler_x: gamma,
            matrix: m,
        }
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> Self {
        Self::from_matrix(self.matrix.transpose())
    }

    /// Geodesic angle of the rotation, radians.
    pub fn angle(&self) -> f64 {
        ((self.matrix.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Camera pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Camera-to-world rotation.
    pub rotation: Rotation,
    /// Camera centre in world coordinates, meters.
    pub center: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation::identity(),
            center: Vector3::zeros(),
        }
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix().transpose() * (p - self.center)
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.center
    }
}

/// Pinhole camera: focal length and principal point in pixels, image size, pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: Pose,
}

impl Camera {
    /// Camera at the world origin with the principal point at the image centre.
    pub fn centered(f: f64, width: usize, height: usize) -> Self {
        Self {
            f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            pose: Pose::identity(),
        }
    }

    /// Camera whose horizontal field of view is `fov_h` radians.
    pub fn from_fov(fov_h: f64, width: usize, height: usize) -> Self {
        Self::centered(focal_from_fov(fov_h, width), width, height)
    }

    pub fn with_pose(mut self, pose: Pose) -> Self {
        self.pose = pose;
        self
    }

    pub fn hfov(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.f)).atan()
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.f, 0.0, self.cx, 0.0, self.f, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn intrinsics_inverse(&self) -> Matrix3<f64> {
        let fi = 1.0 / self.f;
        Matrix3::new(fi, 0.0, -self.cx * fi, 0.0, fi, -self.cy * fi, 0.0, 0.0, 1.0)
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.center
    }

    /// Projects a world point. Errors if it lies behind the camera.
    pub fn project_world(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        project(&self.pose.world_to_camera(p), self)
    }

    /// World-frame direction of the ray through pixel `(u, v)`, with unit
    /// camera-frame depth component.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let d = Vector3::new((u - self.cx) / self.f, (v - self.cy) / self.f, 1.0);
        self.pose.rotation.matrix() * d
    }

    /// True if `(u, v)` lies within the pixel-centre hull of the image.
    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    pub fn is_valid(&self) -> bool {
        self.f > 0.0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64
    }
}

pub fn focal_from_fov(fov_h: f64, width: usize) -> f64 {
    width as f64 / 2.0 / (fov_h / 2.0).tan()
}

/// Pinhole projection of a camera-frame point: `(f·x/z + c_x, f·y/z + c_y)`.
/// No bounds clamping is applied.
pub fn project(point: &Vector3<f64>, camera: &Camera) -> Result<Vector2<f64>, GeometryError> {
    if point.z <= 0.0 {
        return Err(GeometryError::BehindCamera(point.z));
    }
    Ok(Vector2::new(
        camera.f * point.x / point.z + camera.cx,
        camera.f * point.y / point.z + camera.cy,
    ))
}

/// Left, right and back cameras with the two known rig distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeViewRig {
    pub left: Camera,
    pub right: Camera,
    pub back: Camera,
    /// Left-right centre distance, meters.
    pub c_lr: f64,
    /// Left-back distance along the left optical axis, meters.
    pub c_lb: f64,
}

impl ThreeViewRig {
    /// Checks the geometric invariants of the rig to within `tol` meters.
    pub fn check(&self, tol: f64) -> Result<(), String> {
        if !(self.c_lr > 0.0 && self.c_lb > 0.0) {
            return Err("rig distances must be positive".into());
        }
        let lr = (self.right.center() - self.left.center()).norm();
        if (lr - self.c_lr).abs() > tol {
            return Err(format!("|C_r - C_l| = {lr}, expected {}", self.c_lr));
        }
        let lb = self
            .left
            .pose
            .rotation
            .matrix()
            .transpose()
            * (self.left.center() - self.back.center());
        if (lb.z - self.c_lb).abs() > tol {
            return Err(format!("left-back z offset = {}, expected {}", lb.z, self.c_lb));
        }
        Ok(())
    }
}

/// A 2×3 affine map acting on homogeneous pixels `(u, v, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub m: Matrix2x3<f64>,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            m: Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
        }
    }

    pub fn from_rows(row0: [f64; 3], row1: [f64; 3]) -> Self {
        Self {
            m: Matrix2x3::new(row0[0], row0[1], row0[2], row1[0], row1[1], row1[2]),
        }
    }

    pub fn translation(du: f64, dv: f64) -> Self {
        Self::from_rows([1.0, 0.0, du], [0.0, 1.0, dv])
    }

    /// Rotation by `angle` (radians, counter-clockwise in `(u, v)` axes) about `(cu, cv)`.
    pub fn rotation_about(angle: f64, cu: f64, cv: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_rows(
            [c, -s, cu - c * cu + s * cv],
            [s, c, cv - s * cu - c * cv],
        )
    }

    pub fn row(&self, i: usize) -> [f64; 3] {
        [self.m[(i, 0)], self.m[(i, 1)], self.m[(i, 2)]]
    }

    #[inline]
    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        let m = &self.m;
        (
            m[(0, 0)] * u + m[(0, 1)] * v + m[(0, 2)],
            m[(1, 0)] * u + m[(1, 1)] * v + m[(1, 2)],
        )
    }

    pub fn linear(&self) -> Matrix2<f64> {
        self.m.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn det(&self) -> f64 {
        self.linear().determinant()
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        let a = self.to_homogeneous() * other.to_homogeneous();
        Self::from_homogeneous(&a)
    }

    pub fn inverse(&self) -> Result<AffineTransform, GeometryError> {
        let inv = self
            .to_homogeneous()
            .try_inverse()
            .filter(|_| self.det().abs() > 1e-15)
            .ok_or(GeometryError::Singular)?;
        Ok(Self::from_homogeneous(&inv))
    }

    pub fn to_homogeneous(&self) -> Matrix3<f64> {
        let m = &self.m;
        Matrix3::new(
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            0.0,
            0.0,
            1.0,
        )
    }

    fn from_homogeneous(h: &Matrix3<f64>) -> Self {
        Self {
            m: h.fixed_view::<2, 3>(0, 0).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|v| v.is_finite())
    }

    /// Rigid: unit, orthogonal rows and positive determinant.
    pub fn is_rigid(&self, tol: f64) -> bool {
        self.is_similarity(tol) && (self.linear().row(0).norm() - 1.0).abs() <= tol
    }

    /// Equal-norm, orthogonal rows and positive determinant.
    pub fn is_similarity(&self, tol: f64) -> bool {
        let l = self.linear();
        let n0 = l.row(0).norm();
        let n1 = l.row(1).norm();
        (n0 - n1).abs() <= tol * n0.max(1.0) && l.row(0).dot(&l.row(1)).abs() <= tol && l.determinant() > 0.0
    }
}

/// Homography `K · R · K⁻¹` induced by a pure camera rotation.
pub fn rotation_homography(rot: &Rotation, camera: &Camera) -> Matrix3<f64> {
    camera.intrinsics() * rot.matrix() * camera.intrinsics_inverse()
}

/// Maximum |x|, |y| Euler angle for [`small_rotation_affine`], radians.
pub const SMALL_TILT_LIMIT: f64 = 2.0 * std::f64::consts::PI / 180.0;
/// Maximum |z| Euler angle for [`small_rotation_affine`], radians.
pub const SMALL_ROLL_LIMIT: f64 = 10.0 * std::f64::consts::PI / 180.0;

/// First-order affine approximation of [`rotation_homography`].
///
/// `R_x(gamma)` becomes the translation `(0, −f·gamma)`, `R_y(beta)` the
/// translation `(f·beta, 0)` and `R_z(alpha)` the exact in-plane rotation
/// about the principal point; the three are composed in the same order as the
/// rotation itself.
pub fn small_rotation_affine(rot: &Rotation, camera: &Camera) -> Result<AffineTransform, GeometryError> {
    if rot.euler_x.abs() > SMALL_TILT_LIMIT || rot.euler_y.abs() > SMALL_TILT_LIMIT {
        return Err(GeometryError::OutsideSmallAngleRegime(format!(
            "|x|, |y| must be <= 2 deg, got x = {:.4} deg, y = {:.4} deg",
            rot.euler_x.to_degrees(),
            rot.euler_y.to_degrees()
        )));
    }
    if rot.euler_z.abs() > SMALL_ROLL_LIMIT {
        return Err(GeometryError::OutsideSmallAngleRegime(format!(
            "|z| must be <= 10 deg, got {:.4} deg",
            rot.euler_z.to_degrees()
        )));
    }
    let about_z = AffineTransform::rotation_about(rot.euler_z, camera.cx, camera.cy);
    let about_y = AffineTransform::translation(camera.f * rot.euler_y, 0.0);
    let about_x = AffineTransform::translation(0.0, -camera.f * rot.euler_x);
    Ok(about_z.compose(&about_y).compose(&about_x))
}

/// Ordinary least-squares 2×3 affine fit mapping `src` onto `dst`.
pub fn fit_affine_least_squares(
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
) -> Result<AffineTransform, GeometryError> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(GeometryError::DegenerateGrid("need at least three point pairs"));
    }
    // Centre and scale for conditioning; undone below.
    let n = src.len() as f64;
    let (mu, mv) = src
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0 / n, acc.1 + p.1 / n));
    let scale = src
        .iter()
        .map(|p| ((p.0 - mu).powi(2) + (p.1 - mv).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if scale <= 0.0 {
        return Err(GeometryError::DegenerateGrid("all points coincide"));
    }
    let design = DMatrix::from_fn(src.len(), 3, |i, j| match j {
        0 => (src[i].0 - mu) / scale,
        1 => (src[i].1 - mv) / scale,
        _ => 1.0,
    });
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-9 * smax {
        return Err(GeometryError::DegenerateGrid("points are collinear"));
    }
    let mut m = Matrix2x3::zeros();
    for (row, pick) in [|p: &(f64, f64)| p.0, |p: &(f64, f64)| p.1].iter().enumerate() {
        let rhs = DMatrix::from_fn(dst.len(), 1, |i, _| pick(&dst[i]));
        let sol = svd.solve(&rhs, 1e-12).map_err(|_| GeometryError::DegenerateGrid("solve failed"))?;
        let (a, b, c) = (sol[0] / scale, sol[1] / scale, sol[2]);
        m[(row, 0)] = a;
        m[(row, 1)] = b;
        m[(row, 2)] = c - a * mu - b * mv;
    }
    Ok(AffineTransform { m })
}

/// Warps `grid` by the exact rotation homography, fits the best least-squares
/// affine to the warped grid and returns the largest per-point residual (px).
pub fn exact_rotation_homography_residual(
    rot: &Rotation,
    camera: &Camera,
    grid: &[(f64, f64)],
) -> Result<f64, GeometryError> {
    if grid.is_empty() {
        return Err(GeometryError::DegenerateGrid("empty grid"));
    }
    let h = rotation_homography(rot, camera);
    let warped: Vec<(f64, f64)> = grid
        .iter()
        .map(|&(u, v)| {
            let p = h * Vector3::new(u, v, 1.0);
            (p.x / p.z, p.y / p.z)
        })
        .collect();
    let fit = fit_affine_least_squares(grid, &warped)?;
    Ok(grid
        .iter()
        .zip(&warped)
        .map(|(&(u, v), &(wu, wv))| {
            let (fu, fv) = fit.apply(u, v);
            ((fu - wu).powi(2) + (fv - wv).powi(2)).sqrt()
        })
        .fold(0.0, f64::max))
}

/// `nx × ny` grid spanning the full image (pixel-centre hull).
pub fn image_grid(camera: &Camera, nx: usize, ny: usize) -> Vec<(f64, f64)> {
    let step = |n: usize, extent: usize, i: usize| {
        if n <= 1 {
            0.0
        } else {
            i as f64 * (extent - 1) as f64 / (n - 1) as f64
        }
    };
    (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (step(nx, camera.width, i), step(ny, camera.height, j))))
        .collect()
}
