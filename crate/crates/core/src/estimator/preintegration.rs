//! Midpoint IMU preintegration between two keyframes.
//!
//! The error state is `[dp, dv, dtheta]` with the rotation error applied on
//! the right of the preintegrated rotation. Bias Jacobians are propagated
//! through the same linearization so a small bias change can be absorbed
//! without re-integrating.

use nalgebra::{SMatrix, SVector};

use super::EstimatorError;
use crate::geom::{quat_exp, right_jacobian, skew, Mat3, UnitQuaternion, Vec3};
use crate::sim::{ImuNoise, ImuSample};

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix15 = SMatrix<f64, 15, 15>;
pub type Vector15 = SVector<f64, 15>;

/// Relative motion summary between consecutive keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct Preintegrated {
    pub delta_p: Vec3,
    pub delta_v: Vec3,
    pub delta_q: UnitQuaternion,
    /// Covariance of `[dp, dv, dtheta]`.
    pub covariance: Matrix9,
    pub dp_dba: Mat3,
    pub dp_dbg: Mat3,
    pub dv_dba: Mat3,
    pub dv_dbg: Mat3,
    pub dq_dbg: Mat3,
    /// Biases the deltas were integrated with.
    pub accel_bias_lin: Vec3,
    pub gyro_bias_lin: Vec3,
    /// [s]
    pub dt: f64,
    pub accel_bias_walk: f64,
    pub gyro_bias_walk: f64,
}

impl Preintegrated {
    fn empty(accel_bias: Vec3, gyro_bias: Vec3, noise: &ImuNoise) -> Self {
        Self {
            delta_p: Vec3::zeros(),
            delta_v: Vec3::zeros(),
            delta_q: UnitQuaternion::identity(),
            covariance: Matrix9::zeros(),
            dp_dba: Mat3::zeros(),
            dp_dbg: Mat3::zeros(),
            dv_dba: Mat3::zeros(),
            dv_dbg: Mat3::zeros(),
            dq_dbg: Mat3::zeros(),
            accel_bias_lin: accel_bias,
            gyro_bias_lin: gyro_bias,
            dt: 0.0,
            accel_bias_walk: noise.accel_bias_walk,
            gyro_bias_walk: noise.gyro_bias_walk,
        }
    }

    /// Deltas corrected to first order for new bias estimates.
    pub fn corrected(&self, accel_bias: &Vec3, gyro_bias: &Vec3) -> (Vec3, Vec3, UnitQuaternion) {
        let dba = accel_bias - self.accel_bias_lin;
        let dbg = gyro_bias - self.gyro_bias_lin;
        let dp = self.delta_p + self.dp_dba * dba + self.dp_dbg * dbg;
        let dv = self.delta_v + self.dv_dba * dba + self.dv_dbg * dbg;
        let dq = self.delta_q * quat_exp(&(self.dq_dbg * dbg));
        (dp, dv, dq)
    }

    /// Information matrix of the 15-dimensional residual
    /// `[r_p, r_v, r_theta, r_ba, r_bg]`.
    pub fn information(&self) -> Matrix15 {
        let mut info = Matrix15::zeros();
        let cov = self.covariance + Matrix9::identity() * 1e-18;
        let inv = cov.try_inverse().unwrap_or_else(|| Matrix9::identity() * 1e12);
        let inv = 0.5 * (inv + inv.transpose());
        info.fixed_view_mut::<9, 9>(0, 0).copy_from(&inv);
        let wa = 1.0 / (self.accel_bias_walk.powi(2) * self.dt).max(1e-14);
        let wg = 1.0 / (self.gyro_bias_walk.powi(2) * self.dt).max(1e-14);
        for i in 0..3 {
            info[(9 + i, 9 + i)] = wa;
            info[(12 + i, 12 + i)] = wg;
        }
        info
    }
}

/// Integrates `samples` (first to last timestamp) with the given linearization
/// biases.
pub fn preintegrate(samples: &[ImuSample], accel_bias: &Vec3, gyro_bias: &Vec3, noise: &ImuNoise) -> Result<Preintegrated, EstimatorError> {
    if samples.is_empty() {
        return Err(EstimatorError::EmptyImu);
    }
    if samples.len() < 2 {
        return Err(EstimatorError::ZeroInterval);
    }
    let mut pre = Preintegrated::empty(*accel_bias, *gyro_bias, noise);
    for pair in samples.windows(2) {
        let dt = pair[1].time - pair[0].time;
        if !(dt > 0.0) {
            return Err(EstimatorError::NonMonotoneImu { time: pair[1].time });
        }
        integrate_step(&mut pre, &pair[0], &pair[1], dt, noise);
    }
    Ok(pre)
}

fn integrate_step(pre: &mut Preintegrated, s0: &ImuSample, s1: &ImuSample, dt: f64, noise: &ImuNoise) {
    let ba = pre.accel_bias_lin;
    let bg = pre.gyro_bias_lin;
    let w_mid = 0.5 * (s0.angular_rate + s1.angular_rate) - bg;
    let rot_step = quat_exp(&(w_mid * dt));
    let r0 = pre.delta_q.to_matrix();
    let q1 = pre.delta_q * rot_step;
    let r1 = q1.to_matrix();
    let a0 = s0.specific_force - ba;
    let a1 = s1.specific_force - ba;
    let a_mid = 0.5 * (r0 * a0 + r1 * a1);

    // Linearized error propagation: x' = A x + Bb [dba; dbg] + Bn n.
    let step_t = rot_step.to_matrix().transpose();
    let jr = right_jacobian(&(w_mid * dt));
    // dtheta' = step_t dtheta - jr dt dbg + jr dt n_g
    let th_th = step_t;
    let th_bg = -jr * dt;
    // d a_mid = -0.5 r0 [a0]x dtheta - 0.5 r1 [a1]x dtheta' - 0.5 (r0 + r1) dba + ...
    let r0a0 = r0 * skew(&a0);
    let r1a1 = r1 * skew(&a1);
    let am_th = -0.5 * (r0a0 + r1a1 * th_th);
    let am_ba = -0.5 * (r0 + r1);
    let am_bg = -0.5 * r1a1 * th_bg;

    // bias Jacobians
    let dq_dbg_new = th_th * pre.dq_dbg + th_bg;
    let dam_dba = am_th * Mat3::zeros() + am_ba;
    let dam_dbg = am_th * pre.dq_dbg + am_bg;
    let dp_dba_new = pre.dp_dba + pre.dv_dba * dt + 0.5 * dam_dba * dt * dt;
    let dp_dbg_new = pre.dp_dbg + pre.dv_dbg * dt + 0.5 * dam_dbg * dt * dt;
    let dv_dba_new = pre.dv_dba + dam_dba * dt;
    let dv_dbg_new = pre.dv_dbg + dam_dbg * dt;

    // covariance
    let mut a = Matrix9::identity();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Mat3::identity() * dt));
    a.fixed_view_mut::<3, 3>(0, 6).copy_from(&(0.5 * am_th * dt * dt));
    a.fixed_view_mut::<3, 3>(3, 6).copy_from(&(am_th * dt));
    a.fixed_view_mut::<3, 3>(6, 6).copy_from(&th_th);
    // noise inputs: [n_a0, n_a1, n_g]
    let mut b = SMatrix::<f64, 9, 9>::zeros();
    let an_a0 = 0.5 * r0;
    let an_a1 = 0.5 * r1;
    let an_g = -0.5 * r1a1 * (jr * dt);
    b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(an_a0 * 0.5 * dt * dt));
    b.fixed_view_mut::<3, 3>(0, 3).copy_from(&(an_a1 * 0.5 * dt * dt));
    b.fixed_view_mut::<3, 3>(0, 6).copy_from(&(an_g * 0.5 * dt * dt));
    b.fixed_view_mut::<3, 3>(3, 0).copy_from(&(an_a0 * dt));
    b.fixed_view_mut::<3, 3>(3, 3).copy_from(&(an_a1 * dt));
    b.fixed_view_mut::<3, 3>(3, 6).copy_from(&(an_g * dt));
    b.fixed_view_mut::<3, 3>(6, 6).copy_from(&(jr * dt));
    let mut q = Matrix9::zeros();
    let sa = noise.accel_sigma.powi(2);
    let sg = noise.gyro_sigma.powi(2);
    for i in 0..3 {
        q[(i, i)] = sa;
        q[(3 + i, 3 + i)] = sa;
        q[(6 + i, 6 + i)] = 0.5 * sg;
    }
    pre.covariance = a * pre.covariance * a.transpose() + b * q * b.transpose();

    // nominal
    pre.delta_p += pre.delta_v * dt + 0.5 * a_mid * dt * dt;
    pre.delta_v += a_mid * dt;
    pre.delta_q = q1;
    pre.dt += dt;
    pre.dq_dbg = dq_dbg_new;
    pre.dp_dba = dp_dba_new;
    pre.dp_dbg = dp_dbg_new;
    pre.dv_dba = dv_dba_new;
    pre.dv_dbg = dv_dbg_new;
}

/// Linear interpolation of an IMU reading at `time` between two samples.
pub fn interpolate_imu(a: &ImuSample, b: &ImuSample, time: f64) -> ImuSample {
    let span = b.time - a.time;
    let s = if span > 0.0 { ((time - a.time) / span).clamp(0.0, 1.0) } else { 0.0 };
    ImuSample {
        time,
        specific_force: a.specific_force + (b.specific_force - a.specific_force) * s,
        angular_rate: a.angular_rate + (b.angular_rate - a.angular_rate) * s,
    }
}
