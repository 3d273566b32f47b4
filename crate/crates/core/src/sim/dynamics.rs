use nalgebra::Vector6;

use super::{contact_wrench, Allocator, SimError, VehicleParams, WallModel};
use crate::geom::{gravity_w, quat_exp, UnitQuaternion, Vec3};

/// Full rigid-body state of the vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    /// [s]
    pub time: f64,
    /// World frame [m].
    pub position: Vec3,
    /// World frame [m/s].
    pub velocity: Vec3,
    /// Body-to-world rotation.
    pub orientation: UnitQuaternion,
    /// Body frame [rad/s].
    pub angular_velocity: Vec3,
    /// [rad/s]
    pub rotor_speeds: [f64; 6],
    pub in_contact: bool,
    /// Contact wrench `[f; tau]` in the F/T sensor frame.
    pub contact_wrench_s: Vector6<f64>,
    /// World acceleration applied during the last step [m/s^2].
    pub acceleration: Vec3,
}

impl SimState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            time: 0.0,
            position,
            velocity: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
            angular_velocity: Vec3::zeros(),
            rotor_speeds: [0.0; 6],
            in_contact: false,
            contact_wrench_s: Vector6::zeros(),
            acceleration: Vec3::zeros(),
        }
    }

    fn check_finite(&self) -> Result<(), SimError> {
        let diverged = |what| Err(SimError::Diverged { time: self.time, what });
        if !self.position.iter().all(|v| v.is_finite()) {
            return diverged("position");
        }
        if !self.velocity.iter().all(|v| v.is_finite()) {
            return diverged("velocity");
        }
        if !self.angular_velocity.iter().all(|v| v.is_finite()) {
            return diverged("angular velocity");
        }
        if !self.orientation.coords().iter().all(|v| v.is_finite()) {
            return diverged("orientation");
        }
        Ok(())
    }
}

/// Advances the Newton-Euler equations by one semi-implicit Euler step.
///
/// Forces: gravity, the rotor wrench from the commanded speeds and the wall
/// contact. The gyroscopic term `w x Iw` plays the role of the Coriolis
/// matrix for a single rigid body.
pub fn step_dynamics(
    state: &SimState,
    rotor_cmd: &[f64; 6],
    wall: Option<&WallModel>,
    params: &VehicleParams,
    allocator: &Allocator,
    dt: f64,
) -> Result<SimState, SimError> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(SimError::InvalidStep(dt));
    }
    state.check_finite()?;

    let mut speeds = [0.0; 6];
    for i in 0..6 {
        let cmd = rotor_cmd[i].clamp(0.0, params.max_rotor_speed);
        speeds[i] = if params.motor_time_constant > 0.0 {
            let a = dt / (params.motor_time_constant + dt);
            state.rotor_speeds[i] + a * (cmd - state.rotor_speeds[i])
        } else {
            cmd
        };
    }
    let rotor = allocator.wrench(&speeds);
    let contact = wall.map(|w| contact_wrench(state, w, params)).unwrap_or_default();

    let r_wb = state.orientation;
    let force_b = Vec3::new(rotor[0], rotor[1], rotor[2]);
    let torque_b = Vec3::new(rotor[3], rotor[4], rotor[5]) + contact.torque_b;
    let accel = gravity_w() + (r_wb.rotate(&force_b) + contact.force_w) / params.mass;

    let w = state.angular_velocity;
    let iw = params.inertia * w;
    let inertia_inv = params.inertia.try_inverse().ok_or(SimError::InvalidParams("singular inertia".into()))?;
    let w_dot = inertia_inv * (torque_b - w.cross(&iw));

    let velocity = state.velocity + accel * dt;
    let position = state.position + velocity * dt;
    let angular_velocity = w + w_dot * dt;
    let orientation = r_wb * quat_exp(&(angular_velocity * dt));

    let mut contact_s = Vector6::zeros();
    contact_s.fixed_rows_mut::<3>(0).copy_from(&contact.force_s);
    contact_s.fixed_rows_mut::<3>(3).copy_from(&contact.torque_s);

    let next = SimState {
        time: state.time + dt,
        position,
        velocity,
        orientation,
        angular_velocity,
        rotor_speeds: speeds,
        in_contact: contact.in_contact(),
        contact_wrench_s: contact_s,
        acceleration: accel,
    };
    next.check_finite()?;
    Ok(next)
}
