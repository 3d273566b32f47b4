//! Image-based visual servoing on a circular target.
//!
//! The feature is the circle center relative to the principal point and its
//! pixel radius. Depth comes from the apparent area of a target with known
//! physical area.

use nalgebra::{Matrix3, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::UnitQuaternion;
use crate::sim::TargetObservation;

pub type InteractionMatrix = SMatrix<f64, 3, 6>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IbvsError {
    #[error("feature depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid feature: {0}")]
    InvalidFeature(String),
    #[error("invalid servo configuration: {0}")]
    InvalidConfig(String),
}

/// Circle feature. `u`, `v` are measured from the principal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    /// [px]
    pub u: f64,
    /// [px]
    pub v: f64,
    /// [px]
    pub r: f64,
    /// [px^2]
    pub area: f64,
    /// [m]
    pub depth: f64,
}

impl FeatureVector {
    /// Builds the feature from a centered pixel position and radius; the area
    /// is `pi r^2` and the depth follows from the target's physical area.
    pub fn new(u: f64, v: f64, r: f64, cfg: &ServoConfig) -> Result<Self, IbvsError> {
        if !(r > 0.0 && r.is_finite() && u.is_finite() && v.is_finite()) {
            return Err(IbvsError::InvalidFeature(format!("u {u}, v {v}, r {r}")));
        }
        let area = std::f64::consts::PI * r * r;
        let depth = (cfg.fx * cfg.fy * cfg.target_area / area).sqrt();
        if !(depth > 0.0) {
            return Err(IbvsError::NonPositiveDepth(depth));
        }
        Ok(Self { u, v, r, area, depth })
    }

    /// Feature from a raw camera measurement, radius taken as `sqrt(A / pi)`.
    pub fn from_observation(obs: &TargetObservation, cfg: &ServoConfig) -> Result<Self, IbvsError> {
        if !obs.valid || !(obs.area > 0.0) {
            return Err(IbvsError::InvalidFeature("target not observed".into()));
        }
        Self::new(obs.u - cfg.cx, obs.v - cfg.cy, (obs.area / std::f64::consts::PI).sqrt(), cfg)
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, self.r)
    }
}

/// Desired feature, centered pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesiredFeature {
    /// [px]
    pub u: f64,
    /// [px]
    pub v: f64,
    /// [px]
    pub r: f64,
}

impl DesiredFeature {
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, self.r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoConfig {
    pub desired: DesiredFeature,
    /// Convergence rate [1/s].
    pub gain: f64,
    /// [px]
    pub fx: f64,
    /// [px]
    pub fy: f64,
    /// [px]
    pub cx: f64,
    /// [px]
    pub cy: f64,
    /// Physical area of the circular target [m^2].
    pub target_area: f64,
    /// Pseudo-inverse damping.
    pub damping: f64,
    /// [m/s]
    pub linear_limit: f64,
    /// [rad/s]
    pub angular_limit: f64,
    /// Time without a valid target before the servo gives up [s].
    pub lost_timeout: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            desired: DesiredFeature { u: 0.0, v: 0.0, r: 50.0 },
            gain: 0.5,
            fx: 400.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            target_area: std::f64::consts::PI * 0.07 * 0.07,
            damping: 1e-3,
            linear_limit: 0.5,
            angular_limit: 0.5,
            lost_timeout: 0.5,
        }
    }
}

impl ServoConfig {
    pub fn validate(&self) -> Result<(), IbvsError> {
        let bad = |m: &str| Err(IbvsError::InvalidConfig(m.into()));
        if !(self.gain > 0.0) {
            return bad("gain must be positive");
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.target_area > 0.0) {
            return bad("target area must be positive");
        }
        if !(self.damping >= 0.0) {
            return bad("damping must be non-negative");
        }
        if !(self.linear_limit > 0.0 && self.angular_limit > 0.0) {
            return bad("twist limits must be positive");
        }
        if !(self.desired.r > 0.0) {
            return bad("desired radius must be positive");
        }
        if !(self.lost_timeout >= 0.0) {
            return bad("lost timeout must be non-negative");
        }
        Ok(())
    }

    /// Desired radius for a standoff depth `d` [m].
    pub fn radius_at_depth(&self, d: f64) -> f64 {
        (self.fx * self.fy * self.target_area / std::f64::consts::PI).sqrt() / d
    }
}

/// `[u - u*, v - v*, r - r*]`.
pub fn feature_error(s: &FeatureVector, desired: &DesiredFeature) -> Vector3<f64> {
    s.as_vector() - desired.as_vector()
}

/// Interaction matrix of the circle feature for a camera twist
/// `[v; w]` expressed in the optical frame.
pub fn interaction_matrix(s: &FeatureVector, cfg: &ServoConfig) -> Result<InteractionMatrix, IbvsError> {
    let (u, v, r, d) = (s.u, s.v, s.r, s.depth);
    if !(d > 0.0) {
        return Err(IbvsError::NonPositiveDepth(d));
    }
    let (fx, fy) = (cfg.fx, cfg.fy);
    #[rustfmt::skip]
    let l = InteractionMatrix::from_row_slice(&[
        -fx / d, 0.0,     u / d, u * v / fx,          -(fx * fx + u * u) / fx, v,
        0.0,     -fy / d, v / d, (fx * fx + v * v) / fy, -u * v / fy,           -u,
        0.0,     0.0,     r / d, -r * v / fy,         r * u / fx,              0.0,
    ]);
    Ok(l)
}

/// Servo command for one feature error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoTwist {
    /// Camera twist in the optical frame after clamping.
    pub camera: Vector6<f64>,
    /// Same twist expressed in the body frame.
    pub body: Vector6<f64>,
    /// Components that hit their limit.
    pub clamped: [bool; 6],
}

/// Damped least-squares pseudo-inverse `L^T (L L^T + mu^2 I)^-1`.
pub fn damped_pinv(l: &InteractionMatrix, mu: f64) -> Option<SMatrix<f64, 6, 3>> {
    let m = l * l.transpose() + Matrix3::identity() * (mu * mu);
    m.try_inverse().map(|inv| l.transpose() * inv)
}

/// `v_c = -gain L+ e`, clamped componentwise and rotated into the body frame
/// by the camera mounting `r_bo`.
pub fn servo_twist(e: &Vector3<f64>, l: &InteractionMatrix, cfg: &ServoConfig, r_bo: &UnitQuaternion) -> ServoTwist {
    let raw = match damped_pinv(l, cfg.damping) {
        Some(p) => -cfg.gain * p * e,
        None => Vector6::zeros(),
    };
    let mut camera = raw;
    let mut clamped = [false; 6];
    for i in 0..6 {
        let lim = if i < 3 { cfg.linear_limit } else { cfg.angular_limit };
        if !camera[i].is_finite() {
            camera[i] = 0.0;
            clamped[i] = true;
        } else if camera[i].abs() > lim {
            camera[i] = camera[i].clamp(-lim, lim);
            clamped[i] = true;
        }
    }
    let lin = r_bo.rotate(&camera.fixed_rows::<3>(0).into_owned());
    let ang = r_bo.rotate(&camera.fixed_rows::<3>(3).into_owned());
    let mut body = Vector6::zeros();
    body.fixed_rows_mut::<3>(0).copy_from(&lin);
    body.fixed_rows_mut::<3>(3).copy_from(&ang);
    ServoTwist { camera, body, clamped }
}

/// `L` with its rotational columns zeroed. The vehicle holds its attitude,
/// so the camera can only translate; inverting this matrix assigns the whole
/// error rate to translation. Zeroing rotation after inverting the full `L`
/// instead keeps only part of the minimum-norm solution, which can drive the
/// centering error away from zero while the range error is large.
pub fn translation_only(l: &InteractionMatrix) -> InteractionMatrix {
    let mut m = *l;
    m.fixed_columns_mut::<3>(3).fill(0.0);
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServoStatus {
    Tracking,
    /// Target briefly missing; the previous command is held.
    Holding,
    /// Target missing longer than the timeout; the command is zero.
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServoOutput {
    pub time: f64,
    pub status: ServoStatus,
    /// Latest valid feature.
    pub feature: Option<FeatureVector>,
    /// Latest valid feature error.
    pub error: Option<Vector3<f64>>,
    pub twist: ServoTwist,
    /// Body twist passed to the vehicle: translation only, rotation zeroed.
    pub command: Vector6<f64>,
}

/// Stateful servo loop applying the lost-target policy.
#[derive(Debug, Clone)]
pub struct Servo {
    cfg: ServoConfig,
    r_bo: UnitQuaternion,
    last_valid: Option<f64>,
    last: Option<ServoOutput>,
}

impl Servo {
    pub fn new(cfg: ServoConfig, r_bo: UnitQuaternion) -> Result<Self, IbvsError> {
        cfg.validate()?;
        Ok(Self { cfg, r_bo, last_valid: None, last: None })
    }

    pub fn config(&self) -> &ServoConfig {
        &self.cfg
    }

    pub fn update(&mut self, time: f64, obs: &TargetObservation) -> ServoOutput {
        let feature = FeatureVector::from_observation(obs, &self.cfg).ok();
        let out = match feature.and_then(|s| interaction_matrix(&s, &self.cfg).ok().map(|l| (s, l))) {
            Some((s, l)) => {
                self.last_valid = Some(time);
                let e = feature_error(&s, &self.cfg.desired);
                let twist = servo_twist(&e, &translation_only(&l), &self.cfg, &self.r_bo);
                let command = twist.body;
                ServoOutput { time, status: ServoStatus::Tracking, feature: Some(s), error: Some(e), twist, command }
            }
            None => {
                let missing_for = self.last_valid.map(|t| time - t);
                match (&self.last, missing_for) {
                    (Some(prev), Some(dt)) if dt <= self.cfg.lost_timeout => {
                        ServoOutput { time, status: ServoStatus::Holding, ..prev.clone() }
                    }
                    _ => ServoOutput {
                        time,
                        status: ServoStatus::Lost,
                        feature: self.last.as_ref().and_then(|p| p.feature),
                        error: self.last.as_ref().and_then(|p| p.error),
                        twist: ServoTwist { camera: Vector6::zeros(), body: Vector6::zeros(), clamped: [false; 6] },
                        command: Vector6::zeros(),
                    },
                }
            }
        };
        self.last = Some(out.clone());
        out
    }
}
