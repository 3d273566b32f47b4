use serde::{Deserialize, Serialize};

use super::{SimState, VehicleParams};
use crate::geom::Vec3;

/// Planar wall with a circular target, and its compliant contact model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WallModel {
    /// A point on the wall plane, world frame [m].
    pub point: Vec3,
    /// Unit normal pointing out of the wall into free space.
    pub normal: Vec3,
    /// [N/m]
    pub stiffness: f64,
    /// [N s/m]
    pub damping: f64,
    /// Viscous tangential friction [N s/m].
    pub tangential_friction: f64,
    /// Hole center on the wall plane, world frame [m].
    pub hole_center: Vec3,
    /// [m]
    pub hole_inner_radius: f64,
    /// Radius of the visible circular target [m].
    pub target_outer_radius: f64,
}

impl Default for WallModel {
    fn default() -> Self {
        Self {
            point: Vec3::zeros(),
            normal: Vec3::new(-1.0, 0.0, 0.0),
            stiffness: 5000.0,
            damping: 100.0,
            tangential_friction: 20.0,
            hole_center: Vec3::new(0.0, 0.0, 1.5),
            hole_inner_radius: 0.025,
            target_outer_radius: 0.07,
        }
    }
}

impl WallModel {
    /// Signed distance of `p` from the plane, positive on the free side.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(&(p - self.point))
    }

    /// Physical area of the circular target [m^2].
    pub fn target_area(&self) -> f64 {
        std::f64::consts::PI * self.target_outer_radius * self.target_outer_radius
    }
}

/// Contact wrench acting on the end-effector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactWrench {
    pub penetration: f64,
    /// Force on the vehicle, world frame [N].
    pub force_w: Vec3,
    /// Torque about the center of mass, body frame [N m].
    pub torque_b: Vec3,
    /// Force in the F/T sensor frame [N].
    pub force_s: Vec3,
    /// Torque about the sensor origin in the sensor frame [N m].
    pub torque_s: Vec3,
}

impl ContactWrench {
    pub fn in_contact(&self) -> bool {
        self.penetration > 0.0
    }
}

/// Spring-damper normal force with a tension clamp plus viscous tangential
/// friction, evaluated at the end-effector tip.
pub fn contact_wrench(state: &SimState, wall: &WallModel, params: &VehicleParams) -> ContactWrench {
    let r_wb = state.orientation;
    let p_ee = state.position + r_wb.rotate(&params.ee_offset);
    let penetration = (-wall.signed_distance(&p_ee)).max(0.0);
    if penetration <= 0.0 {
        return ContactWrench::default();
    }
    let n = wall.normal;
    let v_ee = state.velocity + r_wb.rotate(&state.angular_velocity.cross(&params.ee_offset));
    let approach = (-n.dot(&v_ee)).max(0.0);
    let normal = (wall.stiffness * penetration + wall.damping * approach) * n;
    let v_tangential = v_ee - n.dot(&v_ee) * n;
    let force_w = normal - wall.tangential_friction * v_tangential;

    let force_b = r_wb.inverse().rotate(&force_w);
    let torque_b = params.ee_offset.cross(&force_b);
    let r_sb = params.ft_rotation.inverse();
    let force_s = r_sb.rotate(&force_b);
    let torque_s = r_sb.rotate(&(params.ee_offset - params.ft_offset).cross(&force_b));
    ContactWrench { penetration, force_w, torque_b, force_s, torque_s }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with_tip_at(x: f64, params: &VehicleParams) -> SimState {
        let mut s = SimState::at_rest(Vec3::new(x - params.ee_offset.x, 0.0, 1.5));
        s.time = 0.0;
        s
    }

    #[test]
    fn no_force_away_from_wall() {
        let p = VehicleParams::default();
        let w = WallModel::default();
        let c = contact_wrench(&state_with_tip_at(-0.1, &p), &w, &p);
        assert_eq!(c, ContactWrench::default());
        assert!(!c.in_contact());
    }

    #[test]
    fn hooke_force_at_one_millimetre() {
        let p = VehicleParams::default();
        let w = WallModel::default();
        let c = contact_wrench(&state_with_tip_at(0.001, &p), &w, &p);
        assert!((c.penetration - 0.001).abs() < 1e-12);
        assert!((c.force_w - 5.0 * w.normal).norm() < 1e-9);
        // sensor reads the same push, expressed in its own frame
        assert!((c.force_s - Vec3::new(-5.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn receding_contact_has_spring_only() {
        let p = VehicleParams::default();
        let w = WallModel::default();
        let mut s = state_with_tip_at(0.001, &p);
        s.velocity = Vec3::new(-0.2, 0.0, 0.0);
        let c = contact_wrench(&s, &w, &p);
        assert!((c.force_w - 5.0 * w.normal).norm() < 1e-9);
        s.velocity = Vec3::new(0.01, 0.0, 0.0);
        let c = contact_wrench(&s, &w, &p);
        assert!((c.force_w.dot(&w.normal) - (5.0 + 100.0 * 0.01)).abs() < 1e-9);
    }

    #[test]
    fn tangential_friction_opposes_sliding() {
        let p = VehicleParams::default();
        let w = WallModel::default();
        let mut s = state_with_tip_at(0.001, &p);
        s.velocity = Vec3::new(0.0, 0.1, 0.0);
        let c = contact_wrench(&s, &w, &p);
        assert!((c.force_w.y + 2.0).abs() < 1e-9);
        assert!(c.force_w.dot(&w.normal) >= 0.0);
    }
}
