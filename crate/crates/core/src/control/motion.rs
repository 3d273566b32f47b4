use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::geom::{quat_log, UnitQuaternion, Vec3, GRAVITY};

/// Velocity PID with gravity feedforward plus a leveling attitude loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    /// Vehicle mass used for the gravity feedforward [kg].
    pub mass: f64,
    /// [N/(m/s)]
    pub kp: Vec3,
    /// [N/m]
    pub ki: Vec3,
    /// [N/(m/s^2)]
    pub kd: Vec3,
    /// Per-axis bound on the integral force [N].
    pub integral_limit: f64,
    /// [N m/rad]
    pub attitude_kp: Vec3,
    /// [N m/(rad/s)]
    pub attitude_kd: Vec3,
    /// Held heading [rad].
    pub yaw: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            mass: 5.0,
            kp: Vec3::repeat(15.0),
            ki: Vec3::repeat(4.0),
            kd: Vec3::zeros(),
            integral_limit: 5.0,
            attitude_kp: Vec3::new(12.0, 12.0, 8.0),
            attitude_kd: Vec3::new(2.5, 2.5, 2.0),
            yaw: 0.0,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let nonneg = |v: &Vec3| v.iter().all(|x| *x >= 0.0 && x.is_finite());
        if !(self.mass > 0.0) {
            return Err(ControlError::InvalidConfig("mass must be positive".into()));
        }
        if !(nonneg(&self.kp) && nonneg(&self.ki) && nonneg(&self.kd) && nonneg(&self.attitude_kp) && nonneg(&self.attitude_kd)) {
            return Err(ControlError::InvalidConfig("motion gains must be non-negative".into()));
        }
        if !(self.integral_limit >= 0.0) {
            return Err(ControlError::InvalidConfig("integral limit must be non-negative".into()));
        }
        Ok(())
    }
}

/// Stateful motion loop. All vectors are in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionController {
    cfg: MotionConfig,
    integral: Vec3,
    prev_error: Option<Vec3>,
}

impl MotionController {
    pub fn new(cfg: MotionConfig) -> Result<Self, ControlError> {
        cfg.validate()?;
        Ok(Self { cfg, integral: Vec3::zeros(), prev_error: None })
    }

    pub fn config(&self) -> &MotionConfig {
        &self.cfg
    }

    /// Integral force [N].
    pub fn integral(&self) -> Vec3 {
        self.cfg.ki.component_mul(&self.integral)
    }

    /// Body wrench tracking `desired` linear velocity with the attitude held
    /// level at the configured heading. `velocity` and `angular_rate` are
    /// body-frame estimates, `attitude` the body-to-world rotation.
    pub fn update(&mut self, desired: &Vec3, velocity: &Vec3, angular_rate: &Vec3, attitude: &UnitQuaternion, dt: f64) -> Vector6<f64> {
        let c = &self.cfg;
        let e = desired - velocity;
        for i in 0..3 {
            if c.ki[i] > 0.0 {
                let bound = c.integral_limit / c.ki[i];
                self.integral[i] = (self.integral[i] + e[i] * dt).clamp(-bound, bound);
            }
        }
        let de = match self.prev_error {
            Some(p) if dt > 0.0 => (e - p) / dt,
            _ => Vec3::zeros(),
        };
        self.prev_error = Some(e);
        let ff = attitude.inverse().rotate(&Vec3::new(0.0, 0.0, c.mass * GRAVITY));
        let force = ff + c.kp.component_mul(&e) + c.ki.component_mul(&self.integral) + c.kd.component_mul(&de);

        let target = UnitQuaternion::from_euler(0.0, 0.0, c.yaw);
        let att_err = quat_log(&(target.inverse() * *attitude));
        let moment = -c.attitude_kp.component_mul(&att_err) - c.attitude_kd.component_mul(angular_rate);
        Vector6::new(force.x, force.y, force.z, moment.x, moment.y, moment.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{step_dynamics, Allocator, SimState, VehicleParams};

    fn feedforward(att: &UnitQuaternion) -> Vec3 {
        att.inverse().rotate(&Vec3::new(0.0, 0.0, 5.0 * GRAVITY))
    }

    #[test]
    fn zero_error_gives_feedforward_only() {
        let mut m = MotionController::new(MotionConfig::default()).unwrap();
        let v = Vec3::new(0.2, -0.1, 0.05);
        let w = m.update(&v, &v, &Vec3::zeros(), &UnitQuaternion::identity(), 0.004);
        assert_eq!(w, Vector6::new(0.0, 0.0, 5.0 * GRAVITY, 0.0, 0.0, 0.0));
    }

    #[test]
    fn proportional_velocity_error() {
        let cfg = MotionConfig { kp: Vec3::repeat(10.0), ki: Vec3::zeros(), kd: Vec3::zeros(), ..Default::default() };
        let mut m = MotionController::new(cfg).unwrap();
        let w = m.update(&Vec3::new(0.1, 0.0, 0.0), &Vec3::zeros(), &Vec3::zeros(), &UnitQuaternion::identity(), 0.004);
        let ff = feedforward(&UnitQuaternion::identity());
        assert!((w[0] - 1.0 - ff.x).abs() < 1e-12);
        assert!((w[2] - ff.z).abs() < 1e-12);
    }

    #[test]
    fn attitude_loop_opposes_tilt() {
        let mut m = MotionController::new(MotionConfig::default()).unwrap();
        let att = UnitQuaternion::from_euler(0.1, -0.05, 0.0);
        let w = m.update(&Vec3::zeros(), &Vec3::zeros(), &Vec3::zeros(), &att, 0.004);
        assert!(w[3] < 0.0 && w[4] > 0.0);
    }

    #[test]
    fn integral_is_clamped() {
        let mut m = MotionController::new(MotionConfig::default()).unwrap();
        for _ in 0..10_000 {
            m.update(&Vec3::new(1.0, -1.0, 1.0), &Vec3::zeros(), &Vec3::zeros(), &UnitQuaternion::identity(), 0.004);
        }
        assert!(m.integral().amax() <= 5.0 + 1e-12);
    }

    /// Closes the loop on the rigid-body simulation with true state feedback.
    #[test]
    fn step_twist_settles_in_simulation() {
        let params = VehicleParams::default();
        let alloc = Allocator::new(&params).unwrap();
        let mut m = MotionController::new(MotionConfig::default()).unwrap();
        let mut s = SimState::at_rest(Vec3::new(-2.0, 0.0, 1.5));
        let cmd = Vec3::new(0.3, -0.2, 0.1);
        let dt = 0.001;
        let mut settled_at = None;
        for k in 0..4000 {
            if k % 4 == 0 {
                let v_b = s.orientation.inverse().rotate(&s.velocity);
                let w = m.update(&cmd, &v_b, &s.angular_velocity, &s.orientation, 0.004);
                s.rotor_speeds = alloc.allocate(&w).speeds;
            }
            s = step_dynamics(&s, &s.rotor_speeds.clone(), None, &params, &alloc, dt).unwrap();
            let v_b = s.orientation.inverse().rotate(&s.velocity);
            let within = (0..3).all(|i| (v_b[i] - cmd[i]).abs() <= 0.1 * cmd[i].abs());
            match (within, settled_at) {
                (true, None) => settled_at = Some(s.time),
                (false, Some(_)) => settled_at = None,
                _ => {}
            }
        }
        let t = settled_at.expect("velocity never settled");
        assert!(t <= 1.5, "settled at {t}");
        let (roll, pitch, _) = s.orientation.euler();
        assert!(roll.abs() < 0.01 && pitch.abs() < 0.01);
    }
}
