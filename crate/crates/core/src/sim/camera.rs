use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CameraNoise, LandmarkField, SimState, WallModel};
use crate::geom::{Mat3, RigidTransform, UnitQuaternion, Vec3};

/// Pinhole camera rigidly mounted on the body. The optical frame is
/// right-down-forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraModel {
    /// [px]
    pub fx: f64,
    /// [px]
    pub fy: f64,
    /// [px]
    pub cx: f64,
    /// [px]
    pub cy: f64,
    /// [px]
    pub width: f64,
    /// [px]
    pub height: f64,
    /// Camera-to-body transform.
    pub body_from_camera: RigidTransform,
    /// Largest angle between the optical axis and the inward wall normal for
    /// which the circle measurement is trusted [rad].
    pub max_incidence: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            fx: 400.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
            body_from_camera: RigidTransform::new(forward_looking(), Vec3::new(0.2, 0.0, 0.0)),
            max_incidence: 30f64.to_radians(),
        }
    }
}

/// Rotation taking a right-down-forward optical frame to a forward-left-up
/// body frame.
pub fn forward_looking() -> UnitQuaternion {
    UnitQuaternion::from_matrix(&Mat3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0))
}

impl CameraModel {
    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.width > 0.0 && self.height > 0.0
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u <= self.width && v >= 0.0 && v <= self.height
    }

    /// World-to-camera transform for the given body pose.
    pub fn camera_from_world(&self, state: &SimState) -> RigidTransform {
        let world_from_body = RigidTransform::new(state.orientation, state.position);
        world_from_body.compose(&self.body_from_camera).inverse()
    }
}

/// Projects a camera-frame point to pixels; `None` behind the camera.
pub fn project(cam: &CameraModel, p_c: &Vec3) -> Option<(f64, f64)> {
    if p_c.z <= 1e-9 {
        return None;
    }
    Some((cam.fx * p_c.x / p_c.z + cam.cx, cam.fy * p_c.y / p_c.z + cam.cy))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkObservation {
    pub id: u32,
    /// [px]
    pub u: f64,
    /// [px]
    pub v: f64,
    pub valid: bool,
}

/// Circle target measurement in raw pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetObservation {
    /// [px]
    pub u: f64,
    /// [px]
    pub v: f64,
    /// [px]
    pub radius: f64,
    /// [px^2]
    pub area: f64,
    pub valid: bool,
}

impl TargetObservation {
    pub fn invalid() -> Self {
        Self { u: 0.0, v: 0.0, radius: 0.0, area: 0.0, valid: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraObservation {
    /// [s]
    pub time: f64,
    /// Every landmark in the field that projects in front of the camera;
    /// occluded or out-of-view ones carry `valid == false`.
    pub landmarks: Vec<LandmarkObservation>,
    pub target: TargetObservation,
}

fn gauss<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    let n: f64 = rng.sample(StandardNormal);
    sigma * n
}

/// Analytic camera measurement of the landmark field and the circular target.
///
/// The target's image area is `A_r fx fy / d^2` with `d` the true depth of
/// its center and the reported radius is `sqrt(A / pi)`.
pub fn sample_camera<R: Rng>(
    state: &SimState,
    wall: &WallModel,
    field: &LandmarkField,
    cam: &CameraModel,
    noise: &CameraNoise,
    rng: &mut R,
) -> CameraObservation {
    let c_from_w = cam.camera_from_world(state);
    let cam_center_w = c_from_w.inverse().translation;
    let cam_side = wall.signed_distance(&cam_center_w);

    let mut landmarks = Vec::with_capacity(field.points.len());
    for (id, p_w) in field.points.iter() {
        let p_c = c_from_w.apply(p_w);
        let Some((u, v)) = project(cam, &p_c) else {
            landmarks.push(LandmarkObservation { id: *id, u: f64::NAN, v: f64::NAN, valid: false });
            continue;
        };
        let lm_side = wall.signed_distance(p_w);
        let occluded = lm_side < -1e-9 && cam_side > 0.0;
        let visible = !occluded && cam.in_image(u, v);
        if visible {
            let (nu, nv) = (gauss(rng, noise.pixel_sigma), gauss(rng, noise.pixel_sigma));
            landmarks.push(LandmarkObservation { id: *id, u: u + nu, v: v + nv, valid: true });
        } else {
            landmarks.push(LandmarkObservation { id: *id, u, v, valid: false });
        }
    }

    let target = observe_target(&c_from_w, wall, cam, noise, rng);
    CameraObservation { time: state.time, landmarks, target }
}

fn observe_target<R: Rng>(
    c_from_w: &RigidTransform,
    wall: &WallModel,
    cam: &CameraModel,
    noise: &CameraNoise,
    rng: &mut R,
) -> TargetObservation {
    let p_c = c_from_w.apply(&wall.hole_center);
    let Some((u, v)) = project(cam, &p_c) else {
        return TargetObservation::invalid();
    };
    let area_true = wall.target_area() * cam.fx * cam.fy / (p_c.z * p_c.z);
    let r_true = (area_true / std::f64::consts::PI).sqrt();
    let inside = cam.in_image(u - r_true, v - r_true) && cam.in_image(u + r_true, v + r_true);
    let axis_w = c_from_w.rotation.inverse().rotate(&Vec3::z());
    let incidence = axis_w.dot(&(-wall.normal)).clamp(-1.0, 1.0).acos();
    if !inside || incidence > cam.max_incidence {
        return TargetObservation::invalid();
    }
    let u = u + gauss(rng, noise.target_center_sigma);
    let v = v + gauss(rng, noise.target_center_sigma);
    let radius = (r_true + gauss(rng, noise.target_radius_sigma)).max(1e-6);
    let area = std::f64::consts::PI * radius * radius;
    TargetObservation { u, v, radius, area, valid: true }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{rng_stream, RngStream};

    fn facing_wall_at(distance: f64, cam: &CameraModel, wall: &WallModel) -> SimState {
        // camera on the target axis, `distance` in front of the wall
        let cam_offset = cam.body_from_camera.translation;
        let p_cam = wall.hole_center + wall.normal * distance;
        SimState::at_rest(p_cam - cam_offset)
    }

    fn quiet() -> CameraNoise {
        CameraNoise { pixel_sigma: 0.0, target_center_sigma: 0.0, target_radius_sigma: 0.0 }
    }

    #[test]
    fn on_axis_target_area_and_radius() {
        let cam = CameraModel { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, ..Default::default() };
        let wall = WallModel { target_outer_radius: 0.1, ..Default::default() };
        let s = facing_wall_at(1.0, &cam, &wall);
        let field = LandmarkField::default();
        let obs = sample_camera(&s, &wall, &field, &cam, &quiet(), &mut rng_stream(0, RngStream::Camera));
        // pinhole oracle: radius f R / d, area pi r^2
        assert!(obs.target.valid);
        assert!((obs.target.radius - 50.0).abs() < 1e-9);
        assert!((obs.target.area - 7853.981633974483).abs() < 1e-6);
        assert!((obs.target.u - 320.0).abs() < 1e-9 && (obs.target.v - 240.0).abs() < 1e-9);
        let a_r = std::f64::consts::PI * 0.01;
        let depth = (cam.fx * cam.fy * a_r / obs.target.area).sqrt();
        assert!((depth - 1.0).abs() < 1e-9);
    }

    #[test]
    fn landmark_behind_camera_is_invalid() {
        let cam = CameraModel::default();
        let wall = WallModel::default();
        let s = facing_wall_at(1.0, &cam, &wall);
        let behind = s.position - Vec3::new(1.0, 0.0, 0.0);
        let field = LandmarkField { points: vec![(0, behind), (1, wall.hole_center + Vec3::new(0.0, 0.1, 0.0))] };
        let obs = sample_camera(&s, &wall, &field, &cam, &quiet(), &mut rng_stream(0, RngStream::Camera));
        assert!(!obs.landmarks[0].valid);
        assert!(obs.landmarks[1].valid);
    }

    #[test]
    fn landmark_beyond_wall_is_occluded() {
        let cam = CameraModel::default();
        let wall = WallModel::default();
        let s = facing_wall_at(1.0, &cam, &wall);
        let field = LandmarkField { points: vec![(0, wall.hole_center + Vec3::new(0.5, 0.1, 0.0))] };
        let obs = sample_camera(&s, &wall, &field, &cam, &quiet(), &mut rng_stream(0, RngStream::Camera));
        assert!(!obs.landmarks[0].valid);
    }

    #[test]
    fn oblique_view_invalidates_target() {
        let cam = CameraModel::default();
        let wall = WallModel::default();
        let mut s = facing_wall_at(1.0, &cam, &wall);
        s.orientation = UnitQuaternion::from_euler(0.0, 0.0, 40f64.to_radians());
        let obs = sample_camera(&s, &wall, &LandmarkField::default(), &cam, &quiet(), &mut rng_stream(0, RngStream::Camera));
        assert!(!obs.target.valid);
    }

    #[test]
    fn camera_axes_point_forward() {
        let q = forward_looking();
        assert!((q.rotate(&Vec3::z()) - Vec3::x()).norm() < 1e-12);
        assert!((q.rotate(&Vec3::x()) + Vec3::y()).norm() < 1e-12);
        assert!((q.rotate(&Vec3::y()) + Vec3::z()).norm() < 1e-12);
    }
}
