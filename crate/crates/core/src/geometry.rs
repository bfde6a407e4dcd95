//! Value types and algebra for rigid and similarity transforms in 3D.
//!
//! The canonical pose convention throughout the crate is camera-to-world: a
//! [`Pose`] places the camera in the world, so the camera center is simply the
//! translation component. Sources that store world-to-camera extrinsics are
//! converted once, at the parse boundary.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

/// Tolerance for algebraic identities on doubles (compose/invert round trips).
pub const ALGEBRA_TOLERANCE: f64 = 1e-9;

/// Tolerance when accepting externally supplied rotation matrices; text
/// formats lose digits, so this is looser than [`ALGEBRA_TOLERANCE`].
pub const ROTATION_ACCEPT_TOLERANCE: f64 = 1e-6;

/// Maximum deviation of a quaternion norm from 1 before the value is rejected
/// as not being a rotation at all.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("matrix is not orthonormal (residual {residual:.3e})")]
    NotOrthonormal { residual: f64 },
    #[error("matrix determinant {det:.6} is not +1; reflections are not rotations")]
    ImproperRotation { det: f64 },
    #[error("quaternion norm {norm:.6} deviates from 1 by more than {QUATERNION_NORM_TOLERANCE}")]
    InvalidQuaternion { norm: f64 },
    #[error("non-finite component in {what}")]
    NonFinite { what: &'static str },
}

/// A proper rotation in 3D, stored as a unit quaternion.
///
/// Constructors validate their input; once built the value always satisfies
/// `R^T R = I` and `det(R) = +1` up to floating-point rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(UnitQuaternion<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3(UnitQuaternion::identity())
    }

    /// Builds a rotation from a 3x3 matrix, rejecting inputs whose
    /// orthogonality residual or determinant error exceeds
    /// [`ROTATION_ACCEPT_TOLERANCE`].
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { what: "rotation matrix" });
        }
        let residual = (m.transpose() * m - Matrix3::identity()).abs().max();
        if residual > ROTATION_ACCEPT_TOLERANCE {
            return Err(GeometryError::NotOrthonormal { residual });
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_ACCEPT_TOLERANCE {
            return Err(GeometryError::ImproperRotation { det });
        }
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*m);
        Ok(Rotation3(UnitQuaternion::from_rotation_matrix(&rot)))
    }

    /// Builds a rotation from quaternion components in `(w, x, y, z)` order.
    /// The quaternion is normalized; norms deviating from 1 by more than
    /// [`QUATERNION_NORM_TOLERANCE`] are rejected. Inputs already unit to
    /// within 1e-12 are taken verbatim, so serialized rotations parse back
    /// bit-identically.
    pub fn from_quaternion_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(GeometryError::InvalidQuaternion { norm });
        }
        if (norm - 1.0).abs() < 1e-12 {
            return Ok(Rotation3(UnitQuaternion::new_unchecked(q)));
        }
        Ok(Rotation3(UnitQuaternion::from_quaternion(q)))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Rotation3(UnitQuaternion::from_axis_angle(&axis, angle))
    }

    /// Exponential map: rotation by `|v|` radians about `v`, identity at zero.
    pub fn from_scaled_axis(v: &Vector3<f64>) -> Self {
        Rotation3(UnitQuaternion::from_scaled_axis(*v))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse(&self) -> Self {
        Rotation3(self.0.inverse())
    }

    pub fn compose(&self, other: &Rotation3) -> Self {
        Rotation3(self.0 * other.0)
    }

    /// Geodesic angle between two rotations, in radians.
    pub fn angle_to(&self, other: &Rotation3) -> f64 {
        self.0.angle_to(&other.0)
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, rhs: Rotation3) -> Rotation3 {
        self.compose(&rhs)
    }
}

/// A camera pose in camera-to-world convention: the rotation maps camera-frame
/// directions to world directions and the translation is the camera center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    /// Converts world-to-camera extrinsics `(R, t)` (so `x_cam = R x_world + t`)
    /// into the canonical camera-to-world pose: center `= -R^T t`, rotation
    /// `= R^T`.
    pub fn from_world_to_camera(rotation: Rotation3, t: Vector3<f64>) -> Self {
        let inv = rotation.inverse();
        Pose { translation: -inv.rotate(&t), rotation: inv }
    }

    /// World-to-camera extrinsics `(R, t)` such that `x_cam = R x_world + t`.
    pub fn to_world_to_camera(&self) -> (Rotation3, Vector3<f64>) {
        let r = self.rotation.inverse();
        (r, -r.rotate(&self.translation))
    }

    /// The camera position in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Maps a world point into the camera frame.
    pub fn world_to_camera_point(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse().rotate(&(world - self.translation))
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.quaternion_wxyz().iter().all(|v| v.is_finite())
    }
}

/// A 7-DoF similarity transform `p -> s R p + t` with positive scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3Transform {
    pub scale: f64,
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl Sim3Transform {
    pub fn identity() -> Self {
        Sim3Transform { scale: 1.0, rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(scale: f64, rotation: Rotation3, translation: Vector3<f64>) -> Self {
        assert!(scale.is_finite() && scale > 0.0, "scale must be positive and finite");
        Sim3Transform { scale, rotation, translation }
    }

    /// Applies the transform to a point: `s R p + t`.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation.rotate(p) + self.translation
    }

    /// Composition such that `compose(a, b)` applies `b` first, then `a`.
    pub fn compose(&self, other: &Sim3Transform) -> Sim3Transform {
        Sim3Transform {
            scale: self.scale * other.scale,
            rotation: self.rotation.compose(&other.rotation),
            translation: self.scale * self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    /// The inverse transform: scale `1/s`, rotation `R^T`, translation
    /// `-(1/s) R^T t`.
    pub fn invert(&self) -> Sim3Transform {
        let inv_scale = 1.0 / self.scale;
        let inv_rot = self.rotation.inverse();
        Sim3Transform {
            scale: inv_scale,
            rotation: inv_rot,
            translation: -inv_scale * inv_rot.rotate(&self.translation),
        }
    }

    /// True when the transform is the identity within `tol` on every
    /// component.
    pub fn is_identity(&self, tol: f64) -> bool {
        (self.scale - 1.0).abs() <= tol
            && self.rotation.angle_to(&Rotation3::identity()) <= tol
            && self.translation.norm() <= tol
    }
}

/// An oriented 3D box; `orientation` is the identity for axis-aligned boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    pub orientation: Rotation3,
}

impl Box3 {
    pub fn axis_aligned(center: Vector3<f64>, half_extents: Vector3<f64>) -> Self {
        debug_assert!(half_extents.iter().all(|h| *h >= 0.0));
        Box3 { center, half_extents, orientation: Rotation3::identity() }
    }

    pub fn from_min_max(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Box3::axis_aligned((min + max) / 2.0, (max - min) / 2.0)
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    /// World-frame axis-aligned bounds of the (possibly oriented) box.
    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let local = Vector3::new(
                        sx * self.half_extents.x,
                        sy * self.half_extents.y,
                        sz * self.half_extents.z,
                    );
                    let corner = self.center + self.orientation.rotate(&local);
                    min = min.inf(&corner);
                    max = max.sup(&corner);
                }
            }
        }
        (min, max)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.orientation.inverse().rotate(&(p - self.center));
        local.x.abs() <= self.half_extents.x
            && local.y.abs() <= self.half_extents.y
            && local.z.abs() <= self.half_extents.z
    }
}
