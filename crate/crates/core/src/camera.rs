//! Seven-parameter camera: rotations, intrinsics, projection and the
//! regression-target encoding of the principal point.
//!
//! Conventions:
//!
//! - `R = R_z(theta) * R_x(elevation) * R_y(azimuth)`, so that all-zero angles
//!   put the camera at `(0, 0, -d)` looking along `+Z`.
//! - Camera axes are x-right, y-down, z-forward.
//! - `T = (0, 0, d)`: the optical axis always passes through the model origin,
//!   which therefore projects onto the principal point `(u, v)`.
//! - Angles are radians. Azimuth is kept in `[0, 2pi)`, elevation and
//!   in-plane rotation in `(-pi, pi]`.

use core::f64::consts::{PI, TAU};
use core::ops::Mul;

use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3, Vector4};
#[allow(unused_imports)]
use num_traits::{Euclid, Float};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::TriangleMesh;

/// Camera-frame depth a point must exceed to be projected.
pub const DEFAULT_NEAR_PLANE: f64 = 1e-6;

/// `|cos(elevation)|` below which azimuth and in-plane rotation are merged.
pub const GIMBAL_LOCK_COS: f64 = 1e-7;

/// Relative Frobenius residual accepted by [`decompose_projection`].
pub const FAMILY_TOLERANCE: f64 = 1e-6;

/// Orthonormality tolerance for [`RotationMatrix::from_matrix`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum CameraError {
    #[error("point is behind the camera (camera depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("projection matrix is not of the form K[R|(0,0,d)] (relative residual {residual:e})")]
    NotInFamily { residual: f64 },
    #[error("invalid pose: {0}")]
    InvalidPose(&'static str),
    #[error("matrix is not a rotation")]
    NotARotation,
    #[error("degenerate bounding box ({width} x {height})")]
    DegenerateBox { width: f64, height: f64 },
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_two_pi(angle: f64) -> f64 {
    if (0.0..TAU).contains(&angle) {
        return angle;
    }
    let r = Euclid::rem_euclid(&angle, &TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_pi(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let r = PI - Euclid::rem_euclid(&(PI - angle), &TAU);
    if r <= -PI {
        PI
    } else {
        r
    }
}

/// The seven annotated camera parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub theta_rad: f64,
    /// Distance from the camera center to the model origin, in model units.
    pub depth: f64,
    pub focal_px: f64,
    pub principal_u_px: f64,
    pub principal_v_px: f64,
}

impl PoseParams {
    /// Builds a validated pose with canonical angles.
    pub fn new(
        azimuth_rad: f64,
        elevation_rad: f64,
        theta_rad: f64,
        depth: f64,
        focal_px: f64,
        principal_u_px: f64,
        principal_v_px: f64,
    ) -> Result<Self, CameraError> {
        let pose = PoseParams {
            azimuth_rad,
            elevation_rad,
            theta_rad,
            depth,
            focal_px,
            principal_u_px,
            principal_v_px,
        };
        pose.validate()?;
        Ok(pose.canonical())
    }

    /// Checks finiteness and `depth > 0`, `focal_px > 0`.
    pub fn validate(&self) -> Result<(), CameraError> {
        let values = [
            self.azimuth_rad,
            self.elevation_rad,
            self.theta_rad,
            self.depth,
            self.focal_px,
            self.principal_u_px,
            self.principal_v_px,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CameraError::InvalidPose("non-finite parameter"));
        }
        if self.depth <= 0.0 {
            return Err(CameraError::InvalidPose("depth must be positive"));
        }
        if self.focal_px <= 0.0 {
            return Err(CameraError::InvalidPose("focal length must be positive"));
        }
        Ok(())
    }

    /// True when the angles already lie in their canonical ranges.
    pub fn is_canonical(&self) -> bool {
        (0.0..TAU).contains(&self.azimuth_rad)
            && self.elevation_rad > -PI
            && self.elevation_rad <= PI
            && self.theta_rad > -PI
            && self.theta_rad <= PI
    }

    pub fn canonical(mut self) -> Self {
        self.azimuth_rad = wrap_two_pi(self.azimuth_rad);
        self.elevation_rad = wrap_pi(self.elevation_rad);
        self.theta_rad = wrap_pi(self.theta_rad);
        self
    }

    pub fn rotation(&self) -> RotationMatrix {
        rotation_from_angles(self.azimuth_rad, self.elevation_rad, self.theta_rad)
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            focal_px: self.focal_px,
            principal_u_px: self.principal_u_px,
            principal_v_px: self.principal_v_px,
        }
    }

    /// Replaces the three angles by a decomposition of `rotation`.
    pub fn with_rotation(mut self, rotation: &RotationMatrix) -> Self {
        let angles = angles_from_rotation(rotation);
        self.azimuth_rad = angles.azimuth_rad;
        self.elevation_rad = angles.elevation_rad;
        self.theta_rad = angles.theta_rad;
        self
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.depth)
    }

    /// Camera center in model coordinates, `-R^T T`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation().matrix().transpose() * self.translation())
    }
}

/// A proper 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Accepts `m` if it is orthonormal with determinant +1 within
    /// [`ROTATION_TOLERANCE`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, CameraError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(CameraError::NotARotation);
        }
        let gram = m.transpose() * m - Matrix3::identity();
        if gram.amax() > ROTATION_TOLERANCE || (m.determinant() - 1.0).abs() > ROTATION_TOLERANCE
        {
            return Err(CameraError::NotARotation);
        }
        Ok(RotationMatrix(m))
    }

    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    /// Closest rotation in the Frobenius sense (orthogonal Procrustes).
    pub fn nearest(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        let mut correction = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            correction[(2, 2)] = -1.0;
        }
        RotationMatrix(u * correction * v_t)
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rodrigues formula for the rotation vector `omega`.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        let angle = omega.norm();
        let k = skew(omega);
        if angle < 1e-8 {
            // second-order series; the error is below f64 resolution here
            return RotationMatrix(Matrix3::identity() + k + k * k * 0.5);
        }
        let a = angle.sin() / angle;
        let b = (1.0 - angle.cos()) / (angle * angle);
        RotationMatrix(Matrix3::identity() + k * a + k * k * b)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn rotate(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.0 * p
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

pub(crate) fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// `R = R_z(theta) * R_x(e) * R_y(a)`.
pub fn rotation_from_angles(azimuth: f64, elevation: f64, theta: f64) -> RotationMatrix {
    RotationMatrix::about_z(theta) * RotationMatrix::about_x(elevation) * RotationMatrix::about_y(azimuth)
}

/// Result of [`angles_from_rotation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub theta_rad: f64,
    /// Set when `|cos e| < GIMBAL_LOCK_COS`; `theta_rad` is then 0 and the
    /// whole roll is carried by the azimuth.
    pub gimbal_lock: bool,
}

/// Inverse of [`rotation_from_angles`], returning the representative with
/// `cos(elevation) >= 0` in canonical ranges.
pub fn angles_from_rotation(rotation: &RotationMatrix) -> EulerAngles {
    let m = rotation.matrix();
    // third row is (-cos e sin a, sin e, cos e cos a)
    let cos_e = (m[(2, 0)] * m[(2, 0)] + m[(2, 2)] * m[(2, 2)]).sqrt();
    let elevation = m[(2, 1)].atan2(cos_e);
    if cos_e < GIMBAL_LOCK_COS {
        // with theta = 0 the first row is (cos a, 0, sin a)
        let azimuth = m[(0, 2)].atan2(m[(0, 0)]);
        return EulerAngles {
            azimuth_rad: wrap_two_pi(azimuth),
            elevation_rad: wrap_pi(elevation),
            theta_rad: 0.0,
            gimbal_lock: true,
        };
    }
    let azimuth = (-m[(2, 0)]).atan2(m[(2, 2)]);
    // second column is (-sin t cos e, cos t cos e, sin e)
    let theta = (-m[(0, 1)]).atan2(m[(1, 1)]);
    EulerAngles {
        azimuth_rad: wrap_two_pi(azimuth),
        elevation_rad: wrap_pi(elevation),
        theta_rad: wrap_pi(theta),
        gimbal_lock: false,
    }
}

/// Unit quaternion `(w, x, y, z)` in canonical sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    /// Normalizes and canonicalizes `(w, x, y, z)`. Returns `None` for a zero
    /// or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n == 0.0 {
            return None;
        }
        Some(UnitQuaternion { w: w / n, x: x / n, y: y / n, z: z / n }.canonical())
    }

    fn canonical(self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else {
            [self.x, self.y, self.z]
                .into_iter()
                .find(|c| *c != 0.0)
                .is_some_and(|c| c < 0.0)
        };
        if flip {
            UnitQuaternion { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            self
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn to_rotation(&self) -> RotationMatrix {
        rotation_from_quat(self)
    }
}

pub fn quat_from_rotation(rotation: &RotationMatrix) -> UnitQuaternion {
    let m = rotation.matrix();
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let (w, x, y, z) = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        (
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        (
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        (
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        (
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    UnitQuaternion::new(w, x, y, z).expect("rotation yields a nonzero quaternion")
}

pub fn rotation_from_quat(q: &UnitQuaternion) -> RotationMatrix {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    RotationMatrix(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Zero-skew, square-pixel intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal_px: f64,
    pub principal_u_px: f64,
    pub principal_v_px: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal_px,
            0.0,
            self.principal_u_px,
            0.0,
            self.focal_px,
            self.principal_v_px,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.focal_px * pc.x / pc.z + self.principal_u_px,
            self.focal_px * pc.y / pc.z + self.principal_v_px,
        )
    }
}

/// A 3x4 perspective projection matrix, defined up to scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(Matrix3x4<f64>);

impl ProjectionMatrix {
    pub fn from_matrix(m: Matrix3x4<f64>) -> Self {
        ProjectionMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    /// Depth of `point` in front of the camera, up to the (positive) scale of
    /// the matrix.
    pub fn depth_of(&self, point: &Vector3<f64>) -> f64 {
        let w = self.0.row(2).dot(&point.push(1.0).transpose());
        let orientation = self.0.fixed_view::<3, 3>(0, 0).determinant();
        if orientation < 0.0 {
            -w
        } else {
            w
        }
    }

    /// Dehomogenized image of `point`.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        let depth = self.depth_of(point);
        if !(depth > 0.0) {
            return Err(CameraError::BehindCamera { depth });
        }
        let h = self.0 * Vector4::new(point.x, point.y, point.z, 1.0);
        Ok(Vector2::new(h.x / h.z, h.y / h.z))
    }

    /// Fits the nearest member of the `K[R|(0,0,d)]` family and returns it
    /// with the relative Frobenius residual of the fit.
    ///
    /// The matrix is rescaled so that the left block's third row has unit
    /// norm and `d > 0`. The principal point is the image of the origin,
    /// the two focal terms are averaged and the rotation is the Procrustes
    /// solution of the remaining rows.
    pub fn nearest_pose(&self) -> Result<(PoseParams, f64), CameraError> {
        let p = &self.0;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(CameraError::InvalidPose("non-finite projection matrix"));
        }
        let scale = p.fixed_view::<1, 3>(2, 0).norm();
        if scale == 0.0 || p[(2, 3)] == 0.0 {
            return Err(CameraError::NotInFamily { residual: f64::INFINITY });
        }
        let m = p * (p[(2, 3)].signum() / scale);
        let depth = m[(2, 3)];
        let u = m[(0, 3)] / depth;
        let v = m[(1, 3)] / depth;
        let r3: Vector3<f64> = m.fixed_view::<1, 3>(2, 0).transpose();
        let a1: Vector3<f64> = m.fixed_view::<1, 3>(0, 0).transpose() - r3 * u;
        let a2: Vector3<f64> = m.fixed_view::<1, 3>(1, 0).transpose() - r3 * v;
        let focal = 0.5 * (a1.norm() + a2.norm());
        if !(focal > 0.0) {
            return Err(CameraError::NotInFamily { residual: f64::INFINITY });
        }
        let stacked = Matrix3::from_rows(&[
            (a1 / focal).transpose(),
            (a2 / focal).transpose(),
            r3.transpose(),
        ]);
        let rotation = RotationMatrix::nearest(&stacked);
        let intrinsics = Intrinsics { focal_px: focal, principal_u_px: u, principal_v_px: v };
        let pose = PoseParams {
            azimuth_rad: 0.0,
            elevation_rad: 0.0,
            theta_rad: 0.0,
            depth,
            focal_px: focal,
            principal_u_px: u,
            principal_v_px: v,
        }
        .with_rotation(&rotation);
        let rebuilt = compose_projection(&intrinsics, &rotation, depth);
        let residual = (m - rebuilt.0).norm() / m.norm();
        Ok((pose, residual))
    }
}

fn compose_projection(k: &Intrinsics, rotation: &RotationMatrix, depth: f64) -> ProjectionMatrix {
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation.matrix());
    rt[(2, 3)] = depth;
    ProjectionMatrix(k.matrix() * rt)
}

/// `P = K[R|T]` with `T = (0, 0, d)`.
pub fn build_projection(pose: &PoseParams) -> ProjectionMatrix {
    compose_projection(&pose.intrinsics(), &pose.rotation(), pose.depth)
}

/// Recovers the seven parameters of a projection matrix of the form
/// `lambda * K[R|(0,0,d)]`.
pub fn decompose_projection(p: &ProjectionMatrix) -> Result<PoseParams, CameraError> {
    let (pose, residual) = p.nearest_pose()?;
    if !(residual <= FAMILY_TOLERANCE) {
        return Err(CameraError::NotInFamily { residual });
    }
    Ok(pose)
}

/// Projects a model point with the near plane at [`DEFAULT_NEAR_PLANE`].
pub fn project_point(pose: &PoseParams, point: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
    project_with(&pose.rotation(), pose, point, DEFAULT_NEAR_PLANE)
}

/// Projects `point` using a precomputed rotation. `pose` supplies depth and
/// intrinsics; its angles are ignored.
pub fn project_with(
    rotation: &RotationMatrix,
    pose: &PoseParams,
    point: &Vector3<f64>,
    near_plane: f64,
) -> Result<Vector2<f64>, CameraError> {
    let mut pc = rotation.rotate(point);
    pc.z += pose.depth;
    if !(pc.z > near_plane) {
        return Err(CameraError::BehindCamera { depth: pc.z });
    }
    Ok(pose.intrinsics().project_camera_point(&pc))
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox2D {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BoundingBox2D {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, CameraError> {
        let b = BoundingBox2D { min_x, min_y, max_x, max_y };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let (width, height) = (self.width(), self.height());
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(CameraError::DegenerateBox { width, height });
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    /// Diagonal length `sqrt(w^2 + h^2)`.
    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    /// Area of the intersection with `[0, width) x [0, height)` divided by
    /// the box area.
    pub fn fraction_inside(&self, width: f64, height: f64) -> f64 {
        let ix = (self.max_x.min(width) - self.min_x.max(0.0)).max(0.0);
        let iy = (self.max_y.min(height) - self.min_y.max(0.0)).max(0.0);
        (ix * iy) / (self.width() * self.height())
    }
}

/// Principal-point offset from the RoI center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetTarget {
    pub du_px: f64,
    pub dv_px: f64,
}

pub fn encode_offset_target(pose: &PoseParams, roi: &BoundingBox2D) -> OffsetTarget {
    let (cx, cy) = roi.center();
    OffsetTarget { du_px: pose.principal_u_px - cx, dv_px: pose.principal_v_px - cy }
}

/// Returns the principal point `(u, v)` encoded by `offset`.
pub fn decode_offset_target(offset: &OffsetTarget, roi: &BoundingBox2D) -> (f64, f64) {
    let (cx, cy) = roi.center();
    (offset.du_px + cx, offset.dv_px + cy)
}

/// Bounding box of the projected mesh vertices.
pub fn project_bbox(pose: &PoseParams, mesh: &TriangleMesh) -> Result<BoundingBox2D, CameraError> {
    let rotation = pose.rotation();
    let mut b = BoundingBox2D {
        min_x: f64::INFINITY,
        min_y: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        max_y: f64::NEG_INFINITY,
    };
    for vertex in mesh.vertices() {
        let p = project_with(&rotation, pose, vertex, DEFAULT_NEAR_PLANE)?;
        b.min_x = b.min_x.min(p.x);
        b.min_y = b.min_y.min(p.y);
        b.max_x = b.max_x.max(p.x);
        b.max_y = b.max_y.max(p.y);
    }
    b.validate()?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;
    use core::f64::consts::FRAC_PI_2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> PoseParams {
        PoseParams::new(
            rng.random_range(0.0..TAU),
            rng.random_range(-1.5..1.5),
            rng.random_range(-PI..PI),
            rng.random_range(1.0..50.0),
            rng.random_range(100.0..4000.0),
            rng.random_range(-100.0..1000.0),
            rng.random_range(-100.0..1000.0),
        )
        .unwrap()
    }

    #[test]
    fn zero_angles_give_identity() {
        assert_eq!(rotation_from_angles(0.0, 0.0, 0.0), RotationMatrix::identity());
    }

    #[test]
    fn azimuth_pi_flips_x_and_z() {
        let r = rotation_from_angles(PI, 0.0, 0.0);
        let expected = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!((r.matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn angle_round_trip() {
        for (a, e, t) in [(0.3, 0.2, 0.1), (1.0, 0.5, -0.25), (5.9, -1.2, 3.0)] {
            let r = rotation_from_angles(a, e, t);
            let m = r.matrix();
            assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-12);
            let back = angles_from_rotation(&r);
            assert!(!back.gimbal_lock);
            assert_relative_eq!(back.azimuth_rad, a, epsilon = 1e-12);
            assert_relative_eq!(back.elevation_rad, e, epsilon = 1e-12);
            assert_relative_eq!(back.theta_rad, t, epsilon = 1e-12);
        }
        let id = angles_from_rotation(&RotationMatrix::identity());
        assert_eq!((id.azimuth_rad, id.elevation_rad, id.theta_rad), (0.0, 0.0, 0.0));
    }

    #[test]
    fn gimbal_lock_representative_reproduces_rotation() {
        let r = rotation_from_angles(1.0, FRAC_PI_2, 0.3);
        let back = angles_from_rotation(&r);
        assert!(back.gimbal_lock);
        assert_eq!(back.theta_rad, 0.0);
        let again = rotation_from_angles(back.azimuth_rad, back.elevation_rad, back.theta_rad);
        assert!((again.matrix() - r.matrix()).norm() < 1e-9);
    }

    #[test]
    fn quaternion_examples() {
        let q = quat_from_rotation(&RotationMatrix::identity());
        assert_eq!(q.as_array(), [1.0, 0.0, 0.0, 0.0]);

        let q = quat_from_rotation(&RotationMatrix::about_y(FRAC_PI_2));
        let h = core::f64::consts::FRAC_1_SQRT_2;
        for (got, want) in q.as_array().iter().zip([h, 0.0, h, 0.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-15);
        }

        let p = UnitQuaternion::new(0.3, -0.5, 0.1, 0.8).unwrap();
        let n = UnitQuaternion::new(-0.3, 0.5, -0.1, -0.8).unwrap();
        assert_eq!(p, n);
        assert!(p.w() >= 0.0);
        assert!((p.to_rotation().matrix() - n.to_rotation().matrix()).amax() < 1e-15);

        // w = 0: first nonzero component made positive
        let q = UnitQuaternion::new(0.0, 0.0, -1.0, 0.0).unwrap();
        assert_eq!(q.as_array(), [0.0, 0.0, 1.0, 0.0]);
        assert!(UnitQuaternion::new(0.0, 0.0, 0.0, 0.0).is_none());
    }

    #[test]
    fn quaternion_round_trip_near_pi() {
        for axis in [Vector3::x(), Vector3::y(), Vector3::z(), Vector3::new(1.0, -2.0, 0.5)] {
            let r = RotationMatrix::exp(&(axis.normalize() * (PI - 1e-9)));
            let back = rotation_from_quat(&quat_from_rotation(&r));
            assert!((back.matrix() - r.matrix()).amax() < 1e-12);
        }
    }

    #[test]
    fn origin_projects_to_principal_point() {
        let pose = PoseParams::new(0.7, -0.3, 1.1, 5.0, 500.0, 112.0, 112.0).unwrap();
        let p = project_point(&pose, &Vector3::zeros()).unwrap();
        assert_eq!((p.x, p.y), (112.0, 112.0));
    }

    #[test]
    fn pinhole_arithmetic() {
        let pose = PoseParams::new(0.0, 0.0, 0.0, 5.0, 500.0, 112.0, 112.0).unwrap();
        let p = project_point(&pose, &Vector3::new(0.1, 0.0, 0.0)).unwrap();
        assert_relative_eq!(p.x, 122.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 112.0, epsilon = 1e-12);
    }

    #[test]
    fn projective_scale_symmetry() {
        let pose = PoseParams::new(0.4, 0.2, -0.1, 4.0, 800.0, 300.0, 200.0).unwrap();
        let x = Vector3::new(0.3, -0.2, 0.25);
        let a = project_point(&pose, &x).unwrap();
        let scaled = PoseParams { depth: pose.depth * 3.5, ..pose };
        let b = project_point(&scaled, &(x * 3.5)).unwrap();
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let pose = PoseParams::new(0.0, 0.0, 0.0, 2.0, 500.0, 0.0, 0.0).unwrap();
        let err = project_point(&pose, &Vector3::new(0.0, 0.0, -2.0)).unwrap_err();
        assert!(matches!(err, CameraError::BehindCamera { .. }));
        assert!(project_point(&pose, &Vector3::new(0.0, 0.0, -3.0)).is_err());
    }

    #[test]
    fn identity_projection() {
        let pose = PoseParams::new(0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let p = build_projection(&pose);
        #[rustfmt::skip]
        let expected = Matrix3x4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 1.0,
        );
        assert_eq!(*p.matrix(), expected);
    }

    #[test]
    fn camera_center_distance_is_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            assert_relative_eq!(pose.camera_center().norm(), pose.depth, max_relative = 1e-12);
        }
    }

    #[test]
    fn projection_matches_project_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let pose = random_pose(&mut rng);
            let p = build_projection(&pose);
            let x = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            let a = project_point(&pose, &x).unwrap();
            let b = p.project(&x).unwrap();
            assert!((a - b).amax() < 1e-8 * (1.0 + a.amax()));
        }
    }

    #[test]
    fn decompose_rejects_skew_and_accepts_scale() {
        let pose = PoseParams::new(2.0, 0.4, -0.3, 7.0, 900.0, 320.0, 240.0).unwrap();
        let p = build_projection(&pose);
        let mut skewed = *p.matrix();
        skewed[(0, 1)] += 0.01 * pose.focal_px;
        assert!(matches!(
            decompose_projection(&ProjectionMatrix::from_matrix(skewed)),
            Err(CameraError::NotInFamily { .. })
        ));

        for s in [7.0, -7.0] {
            let back = decompose_projection(&ProjectionMatrix::from_matrix(p.matrix() * s)).unwrap();
            assert_relative_eq!(back.depth, pose.depth, max_relative = 1e-12);
            assert_relative_eq!(back.focal_px, pose.focal_px, max_relative = 1e-12);
            assert_relative_eq!(back.azimuth_rad, pose.azimuth_rad, epsilon = 1e-12);
        }
    }

    #[test]
    fn offset_target_examples() {
        let roi = BoundingBox2D::new(100.0, 50.0, 180.0, 150.0).unwrap();
        let pose = PoseParams::new(0.0, 0.0, 0.0, 5.0, 500.0, 150.0, 100.0).unwrap();
        let t = encode_offset_target(&pose, &roi);
        assert_eq!(t.du_px, 10.0);
        assert_eq!(t.dv_px, 0.0);
        assert_eq!(decode_offset_target(&t, &roi), (150.0, 100.0));
    }

    #[test]
    fn offset_target_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100_000 {
            let u = rng.random_range(0.0..4096.0);
            let v = rng.random_range(0.0..4096.0);
            let x0 = rng.random_range(0.0..4000.0);
            let y0 = rng.random_range(0.0..4000.0);
            let roi = BoundingBox2D::new(x0, y0, x0 + rng.random_range(1.0..500.0), y0 + 7.5).unwrap();
            let pose = PoseParams { principal_u_px: u, principal_v_px: v, ..PoseParams::new(0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0).unwrap() };
            let (du, dv) = decode_offset_target(&encode_offset_target(&pose, &roi), &roi);
            assert_eq!(du.to_bits(), u.to_bits());
            assert_eq!(dv.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn bbox_of_tetrahedron() {
        let mesh = TriangleMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]],
            "tet",
        )
        .unwrap();
        let pose = PoseParams::new(0.3, 0.2, 0.1, 6.0, 700.0, 256.0, 256.0).unwrap();
        let b = project_bbox(&pose, &mesh).unwrap();
        let projected: alloc::vec::Vec<_> =
            mesh.vertices().iter().map(|x| project_point(&pose, x).unwrap()).collect();
        let min_x = projected.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let max_y = projected.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(b.min_x, min_x);
        assert_eq!(b.max_y, max_y);
    }

    #[test]
    fn bbox_of_centered_cube_is_symmetric() {
        let mesh = crate::mesh::tests::unit_cube([0.0; 3]);
        let pose = PoseParams::new(0.0, 0.0, 0.0, 5.0, 500.0, 200.0, 150.0).unwrap();
        let b = project_bbox(&pose, &mesh).unwrap();
        let (cx, cy) = b.center();
        assert_relative_eq!(cx, 200.0, epsilon = 1e-12);
        assert_relative_eq!(cy, 150.0, epsilon = 1e-12);
    }

    #[test]
    fn single_vertex_box_is_degenerate() {
        let mesh = TriangleMesh::new(vec![Vector3::new(0.1, 0.2, 0.3)], vec![[0, 0, 0]], "dot").unwrap();
        let pose = PoseParams::new(0.0, 0.0, 0.0, 5.0, 500.0, 0.0, 0.0).unwrap();
        assert!(matches!(project_bbox(&pose, &mesh), Err(CameraError::DegenerateBox { .. })));
    }

    #[test]
    fn wrapping_ranges() {
        assert_eq!(wrap_pi(-PI), PI);
        assert_eq!(wrap_pi(PI), PI);
        assert_eq!(wrap_two_pi(TAU), 0.0);
        assert_eq!(wrap_two_pi(-1e-300), 0.0);
        assert_relative_eq!(wrap_pi(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-15);
        let p = PoseParams::new(-0.5, 4.0, -4.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert!(p.is_canonical());
    }

    #[test]
    fn invalid_poses_are_rejected() {
        assert!(PoseParams::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0).is_err());
        assert!(PoseParams::new(0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0).is_err());
        assert!(PoseParams::new(f64::NAN, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn rotation_validation() {
        assert!(RotationMatrix::from_matrix(Matrix3::identity() * 2.0).is_err());
        assert!(RotationMatrix::from_matrix(-Matrix3::<f64>::identity()).is_err());
        let r = rotation_from_angles(0.1, 0.2, 0.3);
        assert!(RotationMatrix::from_matrix(*r.matrix()).is_ok());
    }
}
