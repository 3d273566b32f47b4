//! Rotations, rigid transforms and frame bookkeeping.
//!
//! Conventions used throughout the crate:
//!
//! * Quaternions are Hamilton, stored scalar first, and a rotation `q_ab`
//!   maps vectors expressed in frame `b` into frame `a`.
//! * Orientation perturbations are applied on the right: `q <- q * exp(dtheta)`.
//! * The world frame is forward-left-up with gravity along `-z`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Magnitude of gravitational acceleration [m/s^2].
pub const GRAVITY: f64 = 9.81;

/// Gravity vector in the (z-up) world frame.
pub fn gravity_w() -> Vec3 {
    Vec3::new(0.0, 0.0, -GRAVITY)
}

/// Hamilton unit quaternion, scalar part first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    pub const fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Builds a quaternion from raw components and normalizes it.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }.normalized()
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    fn normalized(self) -> Self {
        let n = (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        Self { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }

    /// Representative of the double cover with non-negative scalar part.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            self
        }
    }

    pub fn negated(self) -> Self {
        Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn inverse(&self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_matrix(&self) -> Mat3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Converts a proper rotation matrix (Shepperd's method).
    pub fn from_matrix(m: &Mat3) -> Self {
        let tr = m.trace();
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Self { w: 0.25 * s, x: (m[(2, 1)] - m[(1, 2)]) / s, y: (m[(0, 2)] - m[(2, 0)]) / s, z: (m[(1, 0)] - m[(0, 1)]) / s }
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Self { w: (m[(2, 1)] - m[(1, 2)]) / s, x: 0.25 * s, y: (m[(0, 1)] + m[(1, 0)]) / s, z: (m[(0, 2)] + m[(2, 0)]) / s }
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Self { w: (m[(0, 2)] - m[(2, 0)]) / s, x: (m[(0, 1)] + m[(1, 0)]) / s, y: 0.25 * s, z: (m[(1, 2)] + m[(2, 1)]) / s }
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Self { w: (m[(1, 0)] - m[(0, 1)]) / s, x: (m[(0, 2)] + m[(2, 0)]) / s, y: (m[(1, 2)] + m[(2, 1)]) / s, z: 0.25 * s }
        };
        q.normalized().canonical()
    }

    /// Z-Y-X (yaw, pitch, roll) Euler angles.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        quat_exp(&Vec3::new(0.0, 0.0, yaw)) * quat_exp(&Vec3::new(0.0, pitch, 0.0)) * quat_exp(&Vec3::new(roll, 0.0, 0.0))
    }

    /// Returns `(roll, pitch, yaw)`.
    pub fn euler(&self) -> (f64, f64, f64) {
        let r = self.to_matrix();
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        (roll, pitch, yaw)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        quat_log(self).norm()
    }

    /// Angle of `self^-1 * other`.
    pub fn angle_to(&self, other: &Self) -> f64 {
        (self.inverse() * *other).angle()
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, r: UnitQuaternion) -> UnitQuaternion {
        let l = self;
        Self {
            w: l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            x: l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            y: l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            z: l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        }
        .normalized()
    }
}

/// Exponential map from a rotation vector [rad] to a unit quaternion.
pub fn quat_exp(omega: &Vec3) -> UnitQuaternion {
    let theta = omega.norm();
    let half = 0.5 * theta;
    let (w, k) = if theta < 1e-8 { (1.0 - theta * theta / 8.0, 0.5 - theta * theta / 48.0) } else { (half.cos(), half.sin() / theta) };
    UnitQuaternion { w, x: k * omega.x, y: k * omega.y, z: k * omega.z }.normalized()
}

/// Logarithm on the principal branch; the result has norm at most pi.
pub fn quat_log(q: &UnitQuaternion) -> Vec3 {
    let q = q.canonical();
    let v = q.vector();
    let n = v.norm();
    if n < 1e-12 {
        return v * (2.0 / q.w);
    }
    let theta = 2.0 * n.atan2(q.w);
    v * (theta / n)
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SO(3) right Jacobian.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Mat3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let t2 = theta * theta;
    Mat3::identity() - ((1.0 - theta.cos()) / t2) * k + ((theta - theta.sin()) / (t2 * theta)) * k * k
}

/// Inverse of [`right_jacobian`].
pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-5 {
        return Mat3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let t2 = theta * theta;
    let c = 1.0 / t2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Mat3::identity() + 0.5 * k + c * k * k
}

/// Reference frames of the vehicle and its environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameId {
    World,
    Body,
    Camera,
    ForceSensor,
    Contact,
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FrameId::World => "world",
            FrameId::Body => "body",
            FrameId::Camera => "camera",
            FrameId::ForceSensor => "force-sensor",
            FrameId::Contact => "contact",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error("transform maps {expected_from} -> {expected_to}, but was applied as {got_from} -> {got_to}")]
    Mismatch { expected_from: FrameId, expected_to: FrameId, got_from: FrameId, got_to: FrameId },
}

/// Proper rigid transform `p_to = R * p_from + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: UnitQuaternion, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vec3::zeros() }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self { rotation: r_inv, translation: -r_inv.rotate(&self.translation) }
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self { rotation: self.rotation * other.rotation, translation: self.rotation.rotate(&other.translation) + self.translation }
    }
}

/// A rigid transform that records which frames it maps between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramedTransform {
    pub from: FrameId,
    pub to: FrameId,
    pub transform: RigidTransform,
}

impl FramedTransform {
    pub fn new(from: FrameId, to: FrameId, transform: RigidTransform) -> Self {
        Self { from, to, transform }
    }

    pub fn inverse(&self) -> Self {
        Self { from: self.to, to: self.from, transform: self.transform.inverse() }
    }

    /// `self ∘ inner`, valid when `inner.to == self.from`.
    pub fn then_after(&self, inner: &FramedTransform) -> Result<FramedTransform, FrameError> {
        if inner.to != self.from {
            return Err(FrameError::Mismatch { expected_from: self.from, expected_to: self.to, got_from: inner.to, got_to: self.to });
        }
        Ok(FramedTransform { from: inner.from, to: self.to, transform: self.transform.compose(&inner.transform) })
    }
}

/// A 3-vector tagged with the frame it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramedVector {
    pub frame: FrameId,
    pub vector: Vec3,
}

impl FramedVector {
    pub fn new(frame: FrameId, vector: Vec3) -> Self {
        Self { frame, vector }
    }
}

/// Maps a point from `from` into `to`, rejecting a transform declared for
/// another pair of frames.
pub fn transform_point(t: &FramedTransform, p: &Vec3, from: FrameId, to: FrameId) -> Result<Vec3, FrameError> {
    if t.from != from || t.to != to {
        return Err(FrameError::Mismatch { expected_from: t.from, expected_to: t.to, got_from: from, got_to: to });
    }
    Ok(t.transform.apply(p))
}

/// Frame-checked version of [`transform_point`] for tagged vectors.
pub fn transform_framed(t: &FramedTransform, p: &FramedVector) -> Result<FramedVector, FrameError> {
    let v = transform_point(t, &p.vector, p.frame, t.to)?;
    Ok(FramedVector::new(t.to, v))
}
