//! Rigid-body pose algebra.
//!
//! Rotations are unit quaternions kept in the canonical hemisphere (`w >= 0`)
//! so that two equal rotations always compare equal component-wise. A [`Pose`]
//! maps points from its own frame into the parent frame: `p_parent = r * p + t`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Inputs with a norm at or below this are rejected by [`normalize`].
pub const MIN_QUATERNION_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate rotation: quaternion norm {norm:e} is not above {MIN_QUATERNION_NORM:e}")]
    DegenerateRotation { norm: f64 },
}

/// Unit quaternion rotation in canonical form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitRotation(UnitQuaternion<f64>);

/// Normalize a `(w, x, y, z)` 4-vector into a canonical unit rotation.
pub fn normalize(wxyz: [f64; 4]) -> Result<UnitRotation, GeometryError> {
    let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
    let norm = q.norm();
    if !(norm > MIN_QUATERNION_NORM) {
        return Err(GeometryError::DegenerateRotation { norm });
    }
    Ok(UnitRotation::canonical(q / norm))
}

impl UnitRotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    fn canonical(q: Quaternion<f64>) -> Self {
        // Renormalize on every construction so drift never accumulates.
        let q = if q.w < 0.0 { -q } else { q };
        Self(UnitQuaternion::new_normalize(q))
    }

    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        normalize([w, x, y, z])
    }

    /// Z-Y-X Tait-Bryan angles in radians.
    pub fn from_ypr(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::canonical(UnitQuaternion::from_euler_angles(roll, pitch, yaw).into_inner())
    }

    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_ypr(yaw, 0.0, 0.0)
    }

    /// Exponential map of a rotation vector (axis * angle).
    pub fn exp(rotvec: &Vector3<f64>) -> Self {
        Self::canonical(UnitQuaternion::from_scaled_axis(*rotvec).into_inner())
    }

    /// Logarithm map; the returned rotation vector has norm in `[0, pi]`.
    pub fn log(&self) -> Vector3<f64> {
        self.0.scaled_axis()
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self::canonical(q.into_inner())
    }

    pub fn as_unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `(yaw, pitch, roll)` in radians.
    pub fn ypr(&self) -> (f64, f64, f64) {
        let (roll, pitch, yaw) = self.0.euler_angles();
        (yaw, pitch, roll)
    }

    pub fn yaw(&self) -> f64 {
        self.ypr().0
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.0.to_rotation_matrix().matrix()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.inverse_transform_vector(v)
    }

    pub fn compose(&self, other: &UnitRotation) -> UnitRotation {
        Self::canonical((self.0 * other.0).into_inner())
    }

    pub fn inverse(&self) -> UnitRotation {
        Self::canonical(self.0.inverse().into_inner())
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        self.0.angle()
    }

    pub fn angle_to(&self, other: &UnitRotation) -> f64 {
        self.inverse().compose(other).angle()
    }

    pub fn norm(&self) -> f64 {
        self.0.quaternion().norm()
    }
}

impl Default for UnitRotation {
    fn default() -> Self {
        Self::identity()
    }
}

/// Rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub t: Vector3<f64>,
    pub r: UnitRotation,
}

impl Pose {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(t: Vector3<f64>, r: UnitRotation) -> Self {
        Self { t, r }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitRotation::identity())
    }

    /// `self ∘ other`: apply `other` expressed in `self`'s frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            t: self.t + self.r.rotate(&other.t),
            r: self.r.compose(&other.r),
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = self.r.inverse();
        Pose {
            t: -r.rotate(&self.t),
            r,
        }
    }

    /// Relative transform `d` with `self.compose(&d) == other`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r.rotate(p) + self.t
    }

    /// Translation distance and rotation angle to `other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        ((self.t - other.t).norm(), self.r.angle_to(&other.r))
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn inverse(a: &Pose) -> Pose {
    a.inverse()
}

pub fn between(a: &Pose, b: &Pose) -> Pose {
    a.between(b)
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

// Config files may give a rotation either as a quaternion or as yaw-pitch-roll.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RotationRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quat: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ypr_deg: Option<[f64; 3]>,
}

impl Serialize for UnitRotation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RotationRepr {
            quat: Some(self.wxyz()),
            ypr_deg: None,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for UnitRotation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = RotationRepr::deserialize(deserializer)?;
        match (repr.quat, repr.ypr_deg) {
            (Some(q), None) => normalize(q).map_err(D::Error::custom),
            (None, Some([y, p, r])) => Ok(UnitRotation::from_ypr(
                y.to_radians(),
                p.to_radians(),
                r.to_radians(),
            )),
            _ => Err(D::Error::custom(
                "rotation needs exactly one of `quat` or `ypr_deg`",
            )),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    #[serde(default)]
    t: [f64; 3],
    #[serde(default)]
    r: UnitRotation,
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PoseRepr {
            t: [self.t.x, self.t.y, self.t.z],
            r: self.r,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        Ok(Pose::new(Vector3::from(repr.t), repr.r))
    }
}
