use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::geom::{Mat3, UnitQuaternion, Vec3};

/// Depth window over which authority over the contact normal moves from the
/// motion loop to the force loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlendConfig {
    /// Full force authority at or below this depth [m].
    pub d_min: f64,
    /// Pure motion control beyond this depth [m].
    pub d_max: f64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self { d_min: 0.2, d_max: 1.0 }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            return Err(ControlError::InvalidConfig("blend needs 0 < d_min < d_max".into()));
        }
        Ok(())
    }
}

/// Cosine confidence factor: 1 up to `d_min`, 0 beyond `d_max`.
pub fn blend_lambda(d: f64, cfg: &BlendConfig) -> f64 {
    if d <= cfg.d_min {
        1.0
    } else if d <= cfg.d_max {
        0.5 * (1.0 + ((d - cfg.d_min) / (cfg.d_max - cfg.d_min) * std::f64::consts::PI).cos())
    } else {
        0.0
    }
}

/// Body wrench split into its motion and force parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchCommand {
    /// Total body wrench `[f; m]` [N, N m].
    pub total: Vector6<f64>,
    /// Motion-loop wrench, body frame.
    pub motion: Vector6<f64>,
    /// Force-loop wrench in the contact frame; only the normal entry is set.
    pub force: Vector6<f64>,
    pub lambda: f64,
}

fn rotate6(r: &Mat3, w: &Vector6<f64>) -> Vector6<f64> {
    let f = r * w.fixed_rows::<3>(0);
    let m = r * w.fixed_rows::<3>(3);
    Vector6::new(f.x, f.y, f.z, m.x, m.y, m.z)
}

/// Blends the motion wrench and the normal force `f_f` through the selection
/// matrix `diag(lambda, 0, 0, 0, 0, 0)` in the contact frame. `r_bc` maps
/// contact-frame vectors into the body frame.
///
/// Evaluated as `tau_vs + R L (tau_f - R^T tau_vs)`, which is algebraically
/// the blend and leaves `tau_vs` untouched when `lambda = 0`.
pub fn compose_wrench(tau_vs: &Vector6<f64>, f_f: f64, lambda: f64, r_bc: &Mat3) -> WrenchCommand {
    let force = Vector6::new(f_f, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut total = *tau_vs;
    if lambda != 0.0 {
        let vs_c = rotate6(&r_bc.transpose(), tau_vs);
        let mut delta = Vector6::zeros();
        delta[0] = lambda * (force[0] - vs_c[0]);
        total += rotate6(r_bc, &delta);
    }
    WrenchCommand { total, motion: *tau_vs, force, lambda }
}

/// The same blend as an explicit 6x6 product, for checking.
pub fn compose_wrench_matrix(tau_vs: &Vector6<f64>, f_f: f64, lambda: f64, r_bc: &Mat3) -> Vector6<f64> {
    let mut r6 = Matrix6::zeros();
    r6.fixed_view_mut::<3, 3>(0, 0).copy_from(r_bc);
    r6.fixed_view_mut::<3, 3>(3, 3).copy_from(r_bc);
    let mut sel = Matrix6::zeros();
    sel[(0, 0)] = lambda;
    let tau_f = Vector6::new(f_f, 0.0, 0.0, 0.0, 0.0, 0.0);
    r6 * ((Matrix6::identity() - sel) * r6.transpose() * tau_vs + sel * tau_f)
}

/// World-to-contact rotation: x along the inward normal (into the surface),
/// z the world up vector made orthogonal to it, y completing the frame.
pub fn contact_frame(outward_normal_w: &Vec3) -> Mat3 {
    let x = -outward_normal_w.normalize();
    let mut up = Vec3::z();
    if x.cross(&up).norm() < 1e-6 {
        up = Vec3::x();
    }
    let z = (up - x * up.dot(&x)).normalize();
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}

/// Contact-to-body rotation for a body attitude `r_wb`.
pub fn body_from_contact(outward_normal_w: &Vec3, r_wb: &UnitQuaternion) -> Mat3 {
    r_wb.to_matrix().transpose() * contact_frame(outward_normal_w)
}
