//! Hybrid force-motion control.
//!
//! The motion loop tracks the visual-servo twist. Along the contact normal
//! its authority is handed to an impedance force law through the confidence
//! factor `lambda(d)`, which rises from 0 to 1 as the visual depth `d` drops
//! through the blend window.

mod blend;
mod force;
mod motion;
mod phase;

pub use blend::{blend_lambda, body_from_contact, compose_wrench, compose_wrench_matrix, contact_frame, BlendConfig, WrenchCommand};
pub use force::{impedance_force, ImpedanceConfig, ImpedanceForce, RateFilter};
pub use motion::{MotionConfig, MotionController};
pub use phase::{phase_update, Phase, PhaseConfig, PhaseState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{UnitQuaternion, Vec3};
use crate::ibvs::ServoOutput;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("invalid control configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub blend: BlendConfig,
    pub impedance: ImpedanceConfig,
    pub motion: MotionConfig,
    pub phase: PhaseConfig,
    /// Cutoff of the scaling-error differentiator [Hz].
    pub rate_cutoff: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            blend: BlendConfig::default(),
            impedance: ImpedanceConfig::default(),
            motion: MotionConfig::default(),
            phase: PhaseConfig::default(),
            rate_cutoff: 10.0,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        self.blend.validate()?;
        self.impedance.validate()?;
        self.motion.validate()?;
        self.phase.validate()?;
        if !(self.rate_cutoff > 0.0) {
            return Err(ControlError::InvalidConfig("rate cutoff must be positive".into()));
        }
        Ok(())
    }
}

/// Snapshot of everything one control tick consumes.
#[derive(Debug, Clone)]
pub struct ControlInput<'a> {
    /// [s]
    pub time: f64,
    /// [s]
    pub dt: f64,
    /// Estimated world velocity [m/s].
    pub velocity_w: Vec3,
    /// Estimated body-to-world attitude.
    pub attitude: UnitQuaternion,
    /// Bias-corrected body angular rate [rad/s].
    pub angular_rate: Vec3,
    pub servo: &'a ServoOutput,
    /// Compressive force along the wall normal [N].
    pub normal_force: f64,
    /// Debounced contact state.
    pub contact: bool,
    /// Outward wall normal, world frame.
    pub wall_normal: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub time: f64,
    pub phase: Phase,
    /// Depth fed to the blend [m].
    pub depth: Option<f64>,
    /// Scaling error [px].
    pub e_x: f64,
    /// Filtered scaling-error rate [px/s].
    pub e_x_rate: f64,
    /// Commanded normal force [N].
    pub f_f: f64,
    pub wrench: WrenchCommand,
}

/// Sequential hybrid controller ticked at the control rate.
#[derive(Debug, Clone)]
pub struct HybridController {
    cfg: ControlConfig,
    motion: MotionController,
    force: ImpedanceForce,
    rate: RateFilter,
    phase: PhaseState,
    depth: Option<f64>,
    e_x: f64,
}

impl HybridController {
    pub fn new(cfg: ControlConfig, start: f64) -> Result<Self, ControlError> {
        cfg.validate()?;
        Ok(Self {
            motion: MotionController::new(cfg.motion.clone())?,
            force: ImpedanceForce::new(cfg.impedance.clone())?,
            rate: RateFilter::with_cutoff(cfg.rate_cutoff),
            phase: PhaseState::start(start),
            depth: None,
            e_x: 0.0,
            cfg,
        })
    }

    pub fn phase(&self) -> &PhaseState {
        &self.phase
    }

    pub fn config(&self) -> &ControlConfig {
        &self.cfg
    }

    pub fn tick(&mut self, input: &ControlInput) -> ControlOutput {
        let servo = input.servo;
        // The depth follows the servo while the target is visible; in force
        // holding it freezes at its last value.
        if let (Some(s), Some(e)) = (servo.feature, servo.error) {
            if servo.status == crate::ibvs::ServoStatus::Tracking {
                if self.phase.phase != Phase::ForceHold {
                    self.depth = Some(s.depth);
                }
                self.e_x = e[2];
                self.rate.update(servo.time, e[2]);
            }
        }
        let fresh_depth = if servo.status == crate::ibvs::ServoStatus::Tracking { servo.feature.map(|s| s.depth) } else { None };
        self.phase = phase_update(&self.phase, input.time, fresh_depth, input.contact, &self.cfg.blend, &self.cfg.phase);

        let lambda = match self.phase.phase {
            Phase::ForceHold => 1.0,
            _ => self.depth.map(|d| blend_lambda(d, &self.cfg.blend)).unwrap_or(0.0),
        };

        let v_b = input.attitude.inverse().rotate(&input.velocity_w);
        let desired = servo.command.fixed_rows::<3>(0).into_owned();
        let tau_vs = self.motion.update(&desired, &v_b, &input.angular_rate, &input.attitude, input.dt);

        let f_f = if self.phase.phase == Phase::ForceHold {
            self.force.update(input.normal_force, self.e_x, self.rate.rate(), input.dt)
        } else {
            self.force.reset();
            self.force.update(input.normal_force, self.e_x, self.rate.rate(), 0.0)
        };
        let r_bc = body_from_contact(&input.wall_normal, &input.attitude);
        let wrench = compose_wrench(&tau_vs, f_f, lambda, &r_bc);
        ControlOutput {
            time: input.time,
            phase: self.phase.phase,
            depth: self.depth,
            e_x: self.e_x,
            e_x_rate: self.rate.rate(),
            f_f,
            wrench,
        }
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{Vector3, Vector6};

    use super::*;
    use crate::ibvs::{FeatureVector, ServoConfig, ServoStatus, ServoTwist};

    fn servo_at(time: f64, depth: f64, status: ServoStatus) -> ServoOutput {
        let cfg = ServoConfig::default();
        let r = cfg.radius_at_depth(depth);
        let s = FeatureVector::new(0.0, 0.0, r, &cfg).unwrap();
        let twist = ServoTwist { camera: Vector6::zeros(), body: Vector6::zeros(), clamped: [false; 6] };
        ServoOutput {
            time,
            status,
            feature: Some(s),
            error: Some(Vector3::new(0.0, 0.0, r - cfg.desired.r)),
            twist,
            command: Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0),
        }
    }

    fn input(time: f64, servo: &ServoOutput, force: f64, contact: bool) -> ControlInput<'_> {
        ControlInput {
            time,
            dt: 0.004,
            velocity_w: Vec3::zeros(),
            attitude: UnitQuaternion::identity(),
            angular_rate: Vec3::zeros(),
            servo,
            normal_force: force,
            contact,
            wall_normal: Vec3::new(-1.0, 0.0, 0.0),
        }
    }

    #[test]
    fn far_from_wall_is_pure_motion() {
        let mut c = HybridController::new(ControlConfig::default(), 0.0).unwrap();
        let s = servo_at(0.0, 2.0, ServoStatus::Tracking);
        let out = c.tick(&input(0.0, &s, 0.0, false));
        assert_eq!(out.phase, Phase::Approach);
        assert_eq!(out.wrench.lambda, 0.0);
        assert_eq!(out.wrench.total, out.wrench.motion);
    }

    #[test]
    fn blend_follows_depth_then_locks_in_contact() {
        let mut c = HybridController::new(ControlConfig::default(), 0.0).unwrap();
        let s = servo_at(0.0, 0.6, ServoStatus::Tracking);
        let out = c.tick(&input(0.0, &s, 0.0, false));
        assert_eq!(out.phase, Phase::Transition);
        assert!((out.wrench.lambda - 0.5).abs() < 1e-12);
        let s = servo_at(0.1, 0.19, ServoStatus::Tracking);
        let out = c.tick(&input(0.1, &s, 5.0, true));
        assert_eq!(out.phase, Phase::ForceHold);
        assert_eq!(out.wrench.lambda, 1.0);
        let frozen = out.depth;
        // depth frozen once holding
        let s = servo_at(0.2, 0.9, ServoStatus::Tracking);
        let out = c.tick(&input(0.2, &s, 5.0, true));
        assert_eq!(out.depth, frozen);
        assert_eq!(out.wrench.lambda, 1.0);
        assert!((out.wrench.total[0] - out.f_f).abs() < 1e-12);
    }

    #[test]
    fn force_integral_only_runs_while_holding() {
        let mut c = HybridController::new(ControlConfig::default(), 0.0).unwrap();
        let s = servo_at(0.0, 0.5, ServoStatus::Tracking);
        for k in 0..100 {
            c.tick(&input(k as f64 * 0.004, &s, 0.0, false));
        }
        assert_eq!(c.force.integral_term(), 0.0);
    }
}
