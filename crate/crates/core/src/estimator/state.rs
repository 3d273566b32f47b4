use nalgebra::{SVector, Vector2};

use crate::geom::{quat_exp, quat_log, RigidTransform, UnitQuaternion, Vec3};

/// Navigation state of one keyframe. Tangent ordering everywhere is
/// `[p, v, theta, b_a, b_g]` with the rotation perturbed on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    /// [s]
    pub time: f64,
    /// World frame [m].
    pub position: Vec3,
    /// World frame [m/s].
    pub velocity: Vec3,
    /// Body-to-world rotation.
    pub orientation: UnitQuaternion,
    /// [m/s^2]
    pub accel_bias: Vec3,
    /// [rad/s]
    pub gyro_bias: Vec3,
}

impl NavState {
    pub const DIM: usize = 15;

    pub fn new(time: f64, position: Vec3, velocity: Vec3, orientation: UnitQuaternion) -> Self {
        Self { time, position, velocity, orientation, accel_bias: Vec3::zeros(), gyro_bias: Vec3::zeros() }
    }

    /// `self ⊞ delta`.
    pub fn retract(&self, delta: &[f64]) -> NavState {
        let d = |i: usize| Vec3::new(delta[i], delta[i + 1], delta[i + 2]);
        NavState {
            time: self.time,
            position: self.position + d(0),
            velocity: self.velocity + d(3),
            orientation: (self.orientation * quat_exp(&d(6))).canonical(),
            accel_bias: self.accel_bias + d(9),
            gyro_bias: self.gyro_bias + d(12),
        }
    }

    /// `self ⊟ reference`, the inverse of [`NavState::retract`].
    pub fn local(&self, reference: &NavState) -> SVector<f64, 15> {
        let mut out = SVector::<f64, 15>::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&(self.position - reference.position));
        out.fixed_rows_mut::<3>(3).copy_from(&(self.velocity - reference.velocity));
        out.fixed_rows_mut::<3>(6).copy_from(&quat_log(&(reference.orientation.inverse() * self.orientation)));
        out.fixed_rows_mut::<3>(9).copy_from(&(self.accel_bias - reference.accel_bias));
        out.fixed_rows_mut::<3>(12).copy_from(&(self.gyro_bias - reference.gyro_bias));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).chain(self.accel_bias.iter()).chain(self.gyro_bias.iter()).all(|v| v.is_finite())
            && self.orientation.coords().iter().all(|v| v.is_finite())
    }
}

/// Camera mounting. Tangent ordering `[t, theta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraExtrinsic {
    pub body_from_camera: RigidTransform,
    pub estimated: bool,
}

impl CameraExtrinsic {
    pub fn fixed(body_from_camera: RigidTransform) -> Self {
        Self { body_from_camera, estimated: false }
    }

    pub fn retract(&self, delta: &[f64]) -> CameraExtrinsic {
        let t = Vec3::new(delta[0], delta[1], delta[2]);
        let w = Vec3::new(delta[3], delta[4], delta[5]);
        let mut out = self.clone();
        out.body_from_camera.translation += t;
        out.body_from_camera.rotation = (out.body_from_camera.rotation * quat_exp(&w)).canonical();
        out
    }

    pub fn local(&self, reference: &CameraExtrinsic) -> SVector<f64, 6> {
        let a = &self.body_from_camera;
        let b = &reference.body_from_camera;
        let mut out = SVector::<f64, 6>::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&(a.translation - b.translation));
        out.fixed_rows_mut::<3>(3).copy_from(&quat_log(&(b.rotation.inverse() * a.rotation)));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Normalized image coordinates of a pixel, as a unit-depth ray.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Vec3 {
        Vec3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, p: &Vec3) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Point feature parameterized by inverse depth along its first observed ray.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub id: u32,
    /// Keyframe id of the anchor; always the frame of `observations[0]`.
    pub anchor: u64,
    /// [1/m]
    pub inverse_depth: f64,
    /// `(keyframe id, pixel)` in keyframe order.
    pub observations: Vec<(u64, Vector2<f64>)>,
    /// Whether the depth is usable for optimization.
    pub has_depth: bool,
}

impl Landmark {
    pub fn new(id: u32, anchor: u64, pixel: Vector2<f64>) -> Self {
        Self { id, anchor, inverse_depth: 0.0, observations: vec![(anchor, pixel)], has_depth: false }
    }

    pub fn anchor_pixel(&self) -> Vector2<f64> {
        self.observations[0].1
    }

    /// Enters the optimization once it has a depth and a second view.
    pub fn is_active(&self) -> bool {
        self.has_depth && self.inverse_depth > 0.0 && self.observations.len() >= 2
    }
}
