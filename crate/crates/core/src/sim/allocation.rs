use nalgebra::{Matrix6, Vector6};

use super::{SimError, VehicleParams};
use crate::geom::{quat_exp, Vec3};

/// Arm direction and thrust axis of rotor `i` in the body frame.
pub(crate) fn rotor_geometry(params: &VehicleParams, i: usize) -> (Vec3, Vec3) {
    let azimuth = std::f64::consts::FRAC_PI_6 + i as f64 * std::f64::consts::FRAC_PI_3;
    let arm = Vec3::new(azimuth.cos(), azimuth.sin(), 0.0);
    let tilt_sign = if i.is_multiple_of(2) { 1.0 } else { -1.0 };
    let axis = quat_exp(&(arm * (tilt_sign * params.tilt))).rotate(&Vec3::z());
    (arm * params.arm_length, axis)
}

/// Maps per-rotor thrust magnitudes to the body wrench `[f; tau]`.
pub fn allocation_matrix(params: &VehicleParams) -> Result<Matrix6<f64>, SimError> {
    let drag_ratio = params.drag_coeff / params.thrust_coeff;
    let mut b = Matrix6::zeros();
    for i in 0..6 {
        let (r, t) = rotor_geometry(params, i);
        let torque = r.cross(&t) + params.spin_dirs[i] * drag_ratio * t;
        b.fixed_view_mut::<3, 1>(0, i).copy_from(&t);
        b.fixed_view_mut::<3, 1>(3, i).copy_from(&torque);
    }
    let sv = b.singular_values();
    let smin = sv.min();
    if smin <= 1e-9 * sv.max() {
        return Err(SimError::RankDeficient(smin));
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    /// Per-rotor thrust after clamping [N].
    pub thrusts: [f64; 6],
    /// [rad/s]
    pub speeds: [f64; 6],
    pub saturated: bool,
}

/// Cached inverse allocation for a fixed airframe.
#[derive(Debug, Clone)]
pub struct Allocator {
    matrix: Matrix6<f64>,
    inverse: Matrix6<f64>,
    thrust_coeff: f64,
    max_speed: f64,
}

impl Allocator {
    pub fn new(params: &VehicleParams) -> Result<Self, SimError> {
        let matrix = allocation_matrix(params)?;
        let inverse = matrix.try_inverse().ok_or(SimError::RankDeficient(0.0))?;
        Ok(Self { matrix, inverse, thrust_coeff: params.thrust_coeff, max_speed: params.max_rotor_speed })
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.matrix
    }

    pub fn allocate(&self, wrench: &Vector6<f64>) -> Allocation {
        let u = self.inverse * wrench;
        let max_thrust = self.thrust_coeff * self.max_speed * self.max_speed;
        let mut saturated = false;
        let mut thrusts = [0.0; 6];
        let mut speeds = [0.0; 6];
        for i in 0..6 {
            let mut ui = u[i];
            if ui < 0.0 {
                ui = 0.0;
                saturated = true;
            } else if ui > max_thrust {
                ui = max_thrust;
                saturated = true;
            }
            thrusts[i] = ui;
            speeds[i] = (ui / self.thrust_coeff).sqrt();
        }
        Allocation { thrusts, speeds, saturated }
    }

    /// Body wrench produced by the given rotor speeds.
    pub fn wrench(&self, speeds: &[f64; 6]) -> Vector6<f64> {
        let u = Vector6::from_iterator(speeds.iter().map(|w| self.thrust_coeff * w * w));
        self.matrix * u
    }
}

/// One-shot allocation of a body wrench to rotor speeds. Negative thrusts
/// clamp to zero and speeds clamp to the rotor limit; either sets the
/// saturation flag.
pub fn allocate(wrench: &Vector6<f64>, params: &VehicleParams) -> Result<Allocation, SimError> {
    Ok(Allocator::new(params)?.allocate(wrench))
}
