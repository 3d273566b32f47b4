//! Fixed-step simulation of the tilted-rotor hexacopter, its wall contact and
//! its onboard sensors.

mod allocation;
mod camera;
mod contact;
mod dynamics;
mod landmarks;
mod sensors;

pub use allocation::{allocate, allocation_matrix, Allocation, Allocator};
pub use camera::{forward_looking, project, sample_camera, CameraModel, CameraObservation, LandmarkObservation, TargetObservation};
pub use contact::{contact_wrench, ContactWrench, WallModel};
pub use dynamics::{step_dynamics, SimState};
pub use landmarks::{LandmarkField, LandmarkFieldConfig};
pub use sensors::{
    rng_stream, sample_ft, sample_imu, CameraNoise, FtNoise, FtSample, FtSensor, ImuBiases, ImuNoise, ImuSample, ImuSensor, RngStream,
    SensorNoise,
};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{UnitQuaternion, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("allocation matrix is rank deficient (smallest singular value {0:.3e})")]
    RankDeficient(f64),
    #[error("time step {0} s outside (0, 0.01]")]
    InvalidStep(f64),
    #[error("non-finite simulation state at t = {time:.6} s: {what}")]
    Diverged { time: f64, what: &'static str },
}

/// Physical description of the vehicle. Rotor `i` sits at azimuth
/// `30° + 60°·i` and its thrust axis is tilted about the arm by `±tilt`,
/// alternating sign from rotor to rotor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// [kg]
    pub mass: f64,
    /// [kg m^2], body frame.
    pub inertia: Matrix3<f64>,
    /// [m]
    pub arm_length: f64,
    /// [rad]
    pub tilt: f64,
    /// Thrust per squared rotor speed [N/(rad/s)^2].
    pub thrust_coeff: f64,
    /// Drag torque per squared rotor speed [N m/(rad/s)^2].
    pub drag_coeff: f64,
    /// +1 counter-clockwise, -1 clockwise (seen from above).
    pub spin_dirs: [f64; 6],
    /// End-effector tip in the body frame [m].
    pub ee_offset: Vec3,
    /// F/T sensor origin in the body frame [m].
    pub ft_offset: Vec3,
    /// Sensor-to-body rotation of the F/T sensor.
    pub ft_rotation: UnitQuaternion,
    /// [rad/s]
    pub max_rotor_speed: f64,
    /// First-order motor lag [s]; zero means the commanded speed is reached
    /// within one step.
    pub motor_time_constant: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 5.0,
            inertia: Matrix3::from_diagonal(&Vec3::new(0.16, 0.16, 0.28)),
            arm_length: 0.45,
            tilt: 30f64.to_radians(),
            thrust_coeff: 2.6e-5,
            drag_coeff: 4.2e-7,
            spin_dirs: [1.0, -1.0, 1.0, -1.0, 1.0, -1.0],
            ee_offset: Vec3::new(0.38, 0.0, 0.0),
            ft_offset: Vec3::new(0.25, 0.0, 0.0),
            ft_rotation: UnitQuaternion::identity(),
            max_rotor_speed: 1100.0,
            motor_time_constant: 0.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidParams(m.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        let sym = (self.inertia - self.inertia.transpose()).abs().max();
        if sym > 1e-12 || self.inertia.cholesky().is_none() {
            return bad("inertia must be symmetric positive definite");
        }
        if !(self.tilt > 0.0 && self.tilt < std::f64::consts::FRAC_PI_2) {
            return bad("tilt must lie in (0, pi/2)");
        }
        if !(self.thrust_coeff > 0.0 && self.drag_coeff > 0.0 && self.arm_length > 0.0) {
            return bad("rotor coefficients and arm length must be positive");
        }
        if !(self.max_rotor_speed > 0.0) || self.motor_time_constant < 0.0 {
            return bad("rotor speed limit must be positive and motor lag non-negative");
        }
        if self.spin_dirs.iter().any(|s| s.abs() != 1.0) {
            return bad("spin directions must be +1 or -1");
        }
        Ok(())
    }

    /// Thrust of each rotor at hover for a level vehicle.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * crate::geom::GRAVITY / (6.0 * self.tilt.cos())
    }
}
