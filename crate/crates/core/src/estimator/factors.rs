//! Residuals and analytic Jacobians of every factor in the window.

use nalgebra::{DMatrix, DVector, Matrix2, SMatrix, Vector2};

use super::preintegration::{Matrix15, Preintegrated, Vector15};
use super::state::{CameraExtrinsic, Intrinsics, NavState};
use super::EstimatorError;
use crate::geom::{gravity_w, quat_log, right_jacobian, right_jacobian_inv, skew, Mat3, Vec3};

pub type Matrix2x15 = SMatrix<f64, 2, 15>;
pub type Matrix2x6 = SMatrix<f64, 2, 6>;

/// Points closer to the observing camera than this are not used [m].
pub const MIN_DEPTH: f64 = 1e-3;

/// Predicts the state at the end of a preintegrated interval.
pub fn predict(x: &NavState, pre: &Preintegrated) -> NavState {
    let dt = pre.dt;
    let (dp, dv, dq) = pre.corrected(&x.accel_bias, &x.gyro_bias);
    let r = x.orientation.to_matrix();
    NavState {
        time: x.time + dt,
        position: x.position + x.velocity * dt + 0.5 * gravity_w() * dt * dt + r * dp,
        velocity: x.velocity + gravity_w() * dt + r * dv,
        orientation: (x.orientation * dq).canonical(),
        accel_bias: x.accel_bias,
        gyro_bias: x.gyro_bias,
    }
}

#[derive(Debug, Clone)]
pub struct ImuEval {
    /// `[r_p, r_v, r_theta, r_ba, r_bg]`
    pub residual: Vector15,
    pub jac_i: Matrix15,
    pub jac_j: Matrix15,
}

/// Preintegration residual between consecutive keyframes.
pub fn imu_residual(xi: &NavState, xj: &NavState, pre: &Preintegrated) -> ImuEval {
    let dt = pre.dt;
    let g = gravity_w();
    let (dp, dv, dq) = pre.corrected(&xi.accel_bias, &xi.gyro_bias);
    let ri_t = xi.orientation.to_matrix().transpose();
    let rj = xj.orientation.to_matrix();

    let a = ri_t * (xj.position - xi.position - xi.velocity * dt - 0.5 * g * dt * dt);
    let b = ri_t * (xj.velocity - xi.velocity - g * dt);
    let err_q = dq.inverse() * xi.orientation.inverse() * xj.orientation;
    let r_theta = quat_log(&err_q);

    let mut residual = Vector15::zeros();
    residual.fixed_rows_mut::<3>(0).copy_from(&(a - dp));
    residual.fixed_rows_mut::<3>(3).copy_from(&(b - dv));
    residual.fixed_rows_mut::<3>(6).copy_from(&r_theta);
    residual.fixed_rows_mut::<3>(9).copy_from(&(xj.accel_bias - xi.accel_bias));
    residual.fixed_rows_mut::<3>(12).copy_from(&(xj.gyro_bias - xi.gyro_bias));

    let jr_inv = right_jacobian_inv(&r_theta);
    let phi = pre.dq_dbg * (xi.gyro_bias - pre.gyro_bias_lin);
    let err_r_t = err_q.to_matrix().transpose();

    let mut ji = Matrix15::zeros();
    let mut jj = Matrix15::zeros();
    let set = |m: &mut Matrix15, r: usize, c: usize, b: &Mat3| m.fixed_view_mut::<3, 3>(r, c).copy_from(b);
    let id = Mat3::identity();

    set(&mut ji, 0, 0, &-ri_t);
    set(&mut ji, 0, 3, &(-ri_t * dt));
    set(&mut ji, 0, 6, &skew(&a));
    set(&mut ji, 0, 9, &-pre.dp_dba);
    set(&mut ji, 0, 12, &-pre.dp_dbg);
    set(&mut jj, 0, 0, &ri_t);

    set(&mut ji, 3, 3, &-ri_t);
    set(&mut ji, 3, 6, &skew(&b));
    set(&mut ji, 3, 9, &-pre.dv_dba);
    set(&mut ji, 3, 12, &-pre.dv_dbg);
    set(&mut jj, 3, 3, &ri_t);

    set(&mut ji, 6, 6, &(-jr_inv * rj.transpose() * ri_t.transpose()));
    set(&mut ji, 6, 12, &(-jr_inv * err_r_t * right_jacobian(&phi) * pre.dq_dbg));
    set(&mut jj, 6, 6, &jr_inv);

    set(&mut ji, 9, 9, &-id);
    set(&mut jj, 9, 9, &id);
    set(&mut ji, 12, 12, &-id);
    set(&mut jj, 12, 12, &id);

    ImuEval { residual, jac_i: ji, jac_j: jj }
}

#[derive(Debug, Clone)]
pub struct VisualEval {
    /// Predicted minus measured pixel [px].
    pub residual: Vector2<f64>,
    pub jac_anchor: Matrix2x15,
    pub jac_observer: Matrix2x15,
    pub jac_extrinsic: Matrix2x6,
    pub jac_inverse_depth: Vector2<f64>,
    /// Depth of the point in the observing camera [m].
    pub depth: f64,
}

/// Reprojection of an inverse-depth landmark from its anchor keyframe into
/// an observing keyframe. `None` when the point is not in front of the
/// observing camera.
pub fn visual_residual(
    anchor: &NavState,
    observer: &NavState,
    ext: &CameraExtrinsic,
    intr: &Intrinsics,
    anchor_pixel: &Vector2<f64>,
    inverse_depth: f64,
    measured: &Vector2<f64>,
) -> Option<VisualEval> {
    if !(inverse_depth > 0.0) {
        return None;
    }
    let bearing = intr.bearing(anchor_pixel);
    let r_bc = ext.body_from_camera.rotation.to_matrix();
    let t_bc = ext.body_from_camera.translation;
    let ri = anchor.orientation.to_matrix();
    let rj = observer.orientation.to_matrix();

    let p_ci = bearing / inverse_depth;
    let p_bi = r_bc * p_ci + t_bc;
    let p_w = ri * p_bi + anchor.position;
    let p_bj = rj.transpose() * (p_w - observer.position);
    let p_cj = r_bc.transpose() * (p_bj - t_bc);
    if p_cj.z <= MIN_DEPTH {
        return None;
    }

    let z = p_cj.z;
    let proj = SMatrix::<f64, 2, 3>::new(intr.fx / z, 0.0, -intr.fx * p_cj.x / (z * z), 0.0, intr.fy / z, -intr.fy * p_cj.y / (z * z));
    let residual = intr.project(&p_cj) - measured;

    let c_w = r_bc.transpose() * rj.transpose();
    let mut jac_anchor = Matrix2x15::zeros();
    jac_anchor.fixed_view_mut::<2, 3>(0, 0).copy_from(&(proj * c_w));
    jac_anchor.fixed_view_mut::<2, 3>(0, 6).copy_from(&(proj * c_w * ri * -skew(&p_bi)));
    let mut jac_observer = Matrix2x15::zeros();
    jac_observer.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-proj * c_w));
    jac_observer.fixed_view_mut::<2, 3>(0, 6).copy_from(&(proj * r_bc.transpose() * skew(&p_bj)));

    let rel = rj.transpose() * ri;
    let mut jac_extrinsic = Matrix2x6::zeros();
    jac_extrinsic.fixed_view_mut::<2, 3>(0, 0).copy_from(&(proj * r_bc.transpose() * (rel - Mat3::identity())));
    let d_rot = r_bc.transpose() * rel * r_bc * -skew(&p_ci) + skew(&p_cj);
    jac_extrinsic.fixed_view_mut::<2, 3>(0, 3).copy_from(&(proj * d_rot));

    let jac_inverse_depth = proj * (r_bc.transpose() * rel * r_bc) * (-bearing / (inverse_depth * inverse_depth));

    Some(VisualEval { residual, jac_anchor, jac_observer, jac_extrinsic, jac_inverse_depth, depth: z })
}

#[derive(Debug, Clone)]
pub struct ContactEval {
    pub residual: Vector2<f64>,
    pub jac_k: Matrix2x15,
    pub jac_k1: Matrix2x15,
}

/// Zero-normal-motion residual `[n.(p_k1 - p_k), n.v_k]`.
pub fn contact_residual(xk: &NavState, xk1: &NavState, n: &Vec3) -> ContactEval {
    let residual = Vector2::new(n.dot(&(xk1.position - xk.position)), n.dot(&xk.velocity));
    let mut jac_k = Matrix2x15::zeros();
    let mut jac_k1 = Matrix2x15::zeros();
    for c in 0..3 {
        jac_k[(0, c)] = -n[c];
        jac_k1[(0, c)] = n[c];
        jac_k[(1, 3 + c)] = n[c];
    }
    ContactEval { residual, jac_k, jac_k1 }
}

/// Isotropic information `1 / (alpha * max(var, floor))` from a window of
/// normal-force samples, using the population variance.
pub fn contact_information(forces: &[f64], alpha: f64, variance_floor: f64) -> Result<Matrix2<f64>, EstimatorError> {
    if forces.len() < 2 {
        return Err(EstimatorError::ForceWindowTooShort(forces.len()));
    }
    if !(alpha > 0.0) {
        return Err(EstimatorError::InvalidConfig("contact alpha must be positive".into()));
    }
    let n = forces.len() as f64;
    let mean = forces.iter().sum::<f64>() / n;
    let var = forces.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    let p = alpha * var.max(variance_floor);
    Ok(Matrix2::identity() / p)
}

/// Contact constraint between two consecutive keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactFactor {
    pub first: u64,
    pub second: u64,
    /// Unit wall normal, world frame.
    pub normal: Vec3,
    pub information: Matrix2<f64>,
    /// Normal-force samples the information was computed from [N].
    pub force_window: Vec<f64>,
    /// Row scaling applied before weighting; the position row is divided
    /// by the keyframe interval so both rows are velocities.
    pub row_scale: Vector2<f64>,
}

impl ContactFactor {
    pub fn evaluate(&self, xk: &NavState, xk1: &NavState) -> ContactEval {
        let mut e = contact_residual(xk, xk1, &self.normal);
        for r in 0..2 {
            e.residual[r] *= self.row_scale[r];
            for c in 0..15 {
                e.jac_k[(r, c)] *= self.row_scale[r];
                e.jac_k1[(r, c)] *= self.row_scale[r];
            }
        }
        e
    }

    pub fn cost(&self, xk: &NavState, xk1: &NavState) -> f64 {
        let r = self.evaluate(xk, xk1).residual;
        (r.transpose() * self.information * r)[(0, 0)]
    }
}

/// Linear prior `|| r0 + J (x - x_lin) ||^2` left behind by marginalization.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPrior {
    /// Keyframe ids in column order; 15 columns each.
    pub frames: Vec<u64>,
    pub linearization: Vec<NavState>,
    /// Extrinsic linearization point when the extrinsic is part of the prior
    /// (6 trailing columns).
    pub extrinsic: Option<CameraExtrinsic>,
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct PriorEval {
    pub residual: DVector<f64>,
    /// Jacobian on the manifold, same column layout as `MarginalPrior::jacobian`.
    pub jacobian: DMatrix<f64>,
}

impl MarginalPrior {
    /// Diagonal prior fixing one keyframe around `state`.
    pub fn gauge(id: u64, state: &NavState, sigmas: &[f64; 15]) -> Self {
        let mut jacobian = DMatrix::zeros(15, 15);
        for i in 0..15 {
            jacobian[(i, i)] = 1.0 / sigmas[i];
        }
        Self { frames: vec![id], linearization: vec![state.clone()], extrinsic: None, jacobian, residual: DVector::zeros(15) }
    }

    pub fn columns(&self) -> usize {
        15 * self.frames.len() + if self.extrinsic.is_some() { 6 } else { 0 }
    }

    pub fn evaluate(&self, states: &[&NavState], ext: Option<&CameraExtrinsic>) -> PriorEval {
        let n = self.columns();
        let mut dx = DVector::zeros(n);
        let mut d = DMatrix::identity(n, n);
        for (k, (x, lin)) in states.iter().zip(&self.linearization).enumerate() {
            let local = x.local(lin);
            dx.rows_mut(15 * k, 15).copy_from(&local);
            let rot = Vec3::new(local[6], local[7], local[8]);
            d.view_mut((15 * k + 6, 15 * k + 6), (3, 3)).copy_from(&right_jacobian_inv(&rot));
        }
        if let (Some(lin), Some(x)) = (&self.extrinsic, ext) {
            let o = 15 * self.frames.len();
            let local = x.local(lin);
            dx.rows_mut(o, 6).copy_from(&local);
            let rot = Vec3::new(local[3], local[4], local[5]);
            d.view_mut((o + 3, o + 3), (3, 3)).copy_from(&right_jacobian_inv(&rot));
        }
        let residual = &self.residual + &self.jacobian * &dx;
        let jacobian = &self.jacobian * d;
        PriorEval { residual, jacobian }
    }
}

/// Huber cost of a squared pixel error and its IRLS weight.
pub fn huber(squared: f64, delta: f64) -> (f64, f64) {
    let d2 = delta * delta;
    if squared <= d2 {
        (squared, 1.0)
    } else {
        let e = squared.sqrt();
        (2.0 * delta * e - d2, delta / e)
    }
}
