//! Sliding-window visual-inertial estimator with a contact-consistency
//! factor.
//!
//! Keyframes are taken from camera frames at a minimum spacing. Each new
//! keyframe is linked to its predecessor by an IMU preintegration factor,
//! observes landmarks through inverse-depth reprojection factors and, while
//! the wall contact detector is on, gets a contact factor that pins the
//! normal position increment and normal velocity to zero with a weight
//! derived from the recent normal-force variance.

mod contact;
mod factors;
mod preintegration;
mod state;
mod window;

use std::collections::{BTreeMap, VecDeque};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use contact::{detect_contact, normal_force, ContactDetector, ContactDetectorConfig, ContactEvent};
pub use factors::{
    contact_information, contact_residual, huber, imu_residual, predict, visual_residual, ContactEval, ContactFactor, ImuEval,
    MarginalPrior, PriorEval, VisualEval, MIN_DEPTH,
};
pub use preintegration::{interpolate_imu, preintegrate, Matrix15, Matrix9, Preintegrated, Vector15};
pub use state::{CameraExtrinsic, Intrinsics, Landmark, NavState};
pub use window::{marginalize_oldest, solve_window, FactorGraphWindow, Keyframe, SolveReport, SolverSettings};

use crate::geom::{UnitQuaternion, Vec3, GRAVITY};
use crate::sim::{CameraObservation, FtSample, ImuNoise, ImuSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("no IMU samples to integrate")]
    EmptyImu,
    #[error("IMU interval has zero duration")]
    ZeroInterval,
    #[error("IMU timestamps not increasing at t = {time}")]
    NonMonotoneImu { time: f64 },
    #[error("force window needs at least two samples, got {0}")]
    ForceWindowTooShort(usize),
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid factor graph: {0}")]
    InvalidWindow(String),
    #[error("cost is not finite")]
    NonFiniteCost,
    #[error("estimator used before initialization")]
    NotInitialized,
}

/// Standard deviations of the prior placed on the first keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSigmas {
    /// [m]
    pub position: f64,
    /// [m/s]
    pub velocity: f64,
    /// [rad]
    pub attitude: f64,
    /// [m/s^2]
    pub accel_bias: f64,
    /// [rad/s]
    pub gyro_bias: f64,
}

impl Default for PriorSigmas {
    fn default() -> Self {
        Self { position: 0.01, velocity: 0.01, attitude: 0.005, accel_bias: 0.1, gyro_bias: 0.005 }
    }
}

impl PriorSigmas {
    pub fn as_array(&self) -> [f64; 15] {
        let mut out = [0.0; 15];
        for i in 0..3 {
            out[i] = self.position;
            out[3 + i] = self.velocity;
            out[6 + i] = self.attitude;
            out[9 + i] = self.accel_bias;
            out[12 + i] = self.gyro_bias;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub solver: SolverSettings,
    /// Minimum time between keyframes [s].
    pub keyframe_spacing: f64,
    /// Cap on landmarks held in the window.
    pub max_features: usize,
    /// Landmarks with depth needed to report tracking.
    pub min_tracked: usize,
    /// Ray angle needed to triangulate a new landmark [deg].
    pub min_parallax_deg: f64,
    pub contact_factors: bool,
    /// Scale of the contact covariance.
    pub contact_alpha: f64,
    /// Lower bound on the force variance [N^2].
    pub contact_variance_floor: f64,
    /// Normal-force samples used for the variance.
    pub force_window: usize,
    pub contact: ContactDetectorConfig,
    /// Noise model used for the preintegration weights.
    pub imu_noise: ImuNoise,
    pub prior: PriorSigmas,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            keyframe_spacing: 0.05,
            max_features: 40,
            min_tracked: 6,
            min_parallax_deg: 1.0,
            contact_factors: true,
            contact_alpha: 1.0,
            contact_variance_floor: 1e-4,
            force_window: 20,
            contact: ContactDetectorConfig::default(),
            imu_noise: ImuNoise::default(),
            prior: PriorSigmas::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::InvalidConfig(m.into()));
        if self.solver.window_size < 2 {
            return bad("window must hold at least two keyframes");
        }
        if !(self.keyframe_spacing > 0.0) {
            return bad("keyframe spacing must be positive");
        }
        if !(self.contact_alpha > 0.0 && self.contact_variance_floor > 0.0) {
            return bad("contact alpha and variance floor must be positive");
        }
        if self.force_window < 2 {
            return bad("force window needs at least two samples");
        }
        if !(self.solver.pixel_sigma > 0.0 && self.solver.huber_delta > 0.0) {
            return bad("pixel sigma and huber scale must be positive");
        }
        self.contact.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorStatus {
    Uninitialized,
    /// Too few landmarks with depth.
    Initializing,
    Tracking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput {
    pub state: NavState,
    pub covariance: Matrix15,
    pub status: EstimatorStatus,
    /// Whether a contact factor was added with this keyframe.
    pub contact_active: bool,
    /// Diagonal entry of the contact information, zero when inactive.
    pub contact_weight: f64,
    pub landmarks_with_depth: usize,
    pub solve: Option<SolveReport>,
}

/// Roll, pitch and gyro bias from samples taken while the vehicle is at
/// rest. Yaw is unobservable from gravity alone.
pub fn static_imu_alignment(samples: &[ImuSample]) -> Option<(f64, f64, Vec3)> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let f = samples.iter().map(|s| s.specific_force).sum::<Vec3>() / n;
    let w = samples.iter().map(|s| s.angular_rate).sum::<Vec3>() / n;
    if (f.norm() - GRAVITY).abs() > 0.5 {
        return None;
    }
    let roll = f.y.atan2(f.z);
    let pitch = (-f.x).atan2((f.y * f.y + f.z * f.z).sqrt());
    Some((roll, pitch, w))
}

#[derive(Debug, Clone)]
pub struct Estimator {
    cfg: EstimatorConfig,
    window: FactorGraphWindow,
    status: EstimatorStatus,
    pending_init: Option<(NavState, BTreeMap<u32, Vec3>)>,
    /// Samples since the newest keyframe; the first one sits exactly at
    /// the keyframe time.
    imu: Vec<ImuSample>,
    detector: ContactDetector,
    forces: VecDeque<f64>,
    wall_normal: Vec3,
    body_from_sensor: UnitQuaternion,
    /// Last known world points of landmarks that left the window.
    retired: BTreeMap<u32, Vec3>,
    latest: Option<NavState>,
    last_output: Option<EstimatorOutput>,
}

impl Estimator {
    pub fn new(
        cfg: EstimatorConfig,
        intrinsics: Intrinsics,
        extrinsic: CameraExtrinsic,
        body_from_sensor: UnitQuaternion,
        wall_normal: Vec3,
    ) -> Result<Self, EstimatorError> {
        cfg.validate()?;
        let detector = ContactDetector::new(cfg.contact.clone())?;
        Ok(Self {
            window: FactorGraphWindow::new(intrinsics, extrinsic, cfg.solver.clone()),
            cfg,
            status: EstimatorStatus::Uninitialized,
            pending_init: None,
            imu: Vec::new(),
            detector,
            forces: VecDeque::new(),
            wall_normal: wall_normal.normalize(),
            body_from_sensor,
            retired: BTreeMap::new(),
            latest: None,
            last_output: None,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn status(&self) -> EstimatorStatus {
        self.status
    }

    pub fn window(&self) -> &FactorGraphWindow {
        &self.window
    }

    pub fn contact_on(&self) -> bool {
        self.detector.is_on()
    }

    pub fn last_output(&self) -> Option<&EstimatorOutput> {
        self.last_output.as_ref()
    }

    /// Sets the starting state. `landmark_hints` are world points used to
    /// seed the depth of landmarks seen in the first keyframe.
    pub fn initialize(&mut self, state: NavState, landmark_hints: BTreeMap<u32, Vec3>) {
        self.imu.retain(|s| s.time >= state.time);
        self.latest = Some(state.clone());
        self.pending_init = Some((state, landmark_hints));
        self.status = EstimatorStatus::Initializing;
    }

    /// Newest keyframe estimate propagated with the IMU samples received
    /// since.
    pub fn latest(&self) -> Option<&NavState> {
        self.latest.as_ref()
    }

    pub fn push_imu(&mut self, sample: ImuSample) -> Result<(), EstimatorError> {
        if let Some(last) = self.imu.last() {
            if !(sample.time > last.time) {
                return Err(EstimatorError::NonMonotoneImu { time: sample.time });
            }
        }
        self.imu.push(sample);
        self.refresh_latest();
        Ok(())
    }

    fn refresh_latest(&mut self) {
        let base = match (&self.pending_init, self.window.newest()) {
            (Some((s, _)), _) => s.clone(),
            (None, Some(kf)) => kf.state.clone(),
            _ => return,
        };
        let mut seq: Vec<ImuSample> = self.imu.iter().filter(|s| s.time >= base.time).copied().collect();
        if seq.first().map(|s| s.time > base.time).unwrap_or(false) {
            let mut first = seq[0];
            first.time = base.time;
            seq.insert(0, first);
        }
        self.latest = match preintegrate(&seq, &base.accel_bias, &base.gyro_bias, &self.cfg.imu_noise) {
            Ok(pre) => Some(predict(&base, &pre)),
            Err(_) => Some(base),
        };
    }

    /// Feeds one F/T sample to the contact detector and the force window.
    pub fn push_ft(&mut self, sample: &FtSample) {
        let attitude = self.latest.as_ref().map(|s| s.orientation).unwrap_or_default();
        let f = normal_force(sample, &self.wall_normal, &attitude, &self.body_from_sensor);
        self.detector.update(sample.time, f);
        self.forces.push_back(f);
        while self.forces.len() > self.cfg.force_window {
            self.forces.pop_front();
        }
    }

    /// One estimator step: consume the measurement batches gathered since
    /// the previous camera frame, then process the frame. Returns an output
    /// only when the frame became a keyframe.
    pub fn step(
        &mut self,
        imu: &[ImuSample],
        camera: &CameraObservation,
        ft: &[FtSample],
        wall_normal: &Vec3,
    ) -> Result<Option<EstimatorOutput>, EstimatorError> {
        self.wall_normal = wall_normal.normalize();
        for s in imu {
            self.push_imu(*s)?;
        }
        for s in ft {
            self.push_ft(s);
        }
        self.process_camera(camera)
    }

    /// Makes a keyframe from `obs` if the spacing allows it.
    pub fn process_camera(&mut self, obs: &CameraObservation) -> Result<Option<EstimatorOutput>, EstimatorError> {
        if let Some((init, hints)) = self.pending_init.take() {
            return self.first_keyframe(init, hints, obs).map(Some);
        }
        let Some(last) = self.window.newest() else {
            return Err(EstimatorError::NotInitialized);
        };
        if obs.time - last.state.time < self.cfg.keyframe_spacing - 1e-9 {
            return Ok(None);
        }
        let last_state = last.state.clone();
        let seq = self.take_imu_until(last_state.time, obs.time)?;
        let pre = preintegrate(&seq, &last_state.accel_bias, &last_state.gyro_bias, &self.cfg.imu_noise)?;
        let mut state = predict(&last_state, &pre);
        state.time = obs.time;
        let prev_id = self.window.newest().unwrap().id;
        let id = self.window.push_keyframe(state, Some(pre))?;
        self.associate(id, obs, None);

        let mut contact_weight = 0.0;
        let contact_active = self.cfg.contact_factors && self.detector.is_on() && self.forces.len() >= 2;
        if contact_active {
            let forces: Vec<f64> = self.forces.iter().copied().collect();
            let information = contact_information(&forces, self.cfg.contact_alpha, self.cfg.contact_variance_floor)?;
            contact_weight = information[(0, 0)];
            let dt = obs.time - last_state.time;
            self.window.contacts.push(ContactFactor {
                first: prev_id,
                second: id,
                normal: -self.wall_normal,
                information,
                force_window: forces,
                row_scale: Vector2::new(1.0 / dt, 1.0),
            });
        }

        self.triangulate();
        let report = solve_window(&mut self.window)?;
        self.retire_and_marginalize()?;
        Ok(Some(self.finish(Some(report), contact_active, contact_weight)))
    }

    fn first_keyframe(
        &mut self,
        init: NavState,
        hints: BTreeMap<u32, Vec3>,
        obs: &CameraObservation,
    ) -> Result<EstimatorOutput, EstimatorError> {
        let mut state = init.clone();
        if obs.time > init.time {
            let seq = self.take_imu_until(init.time, obs.time)?;
            let pre = preintegrate(&seq, &init.accel_bias, &init.gyro_bias, &self.cfg.imu_noise)?;
            state = predict(&init, &pre);
        } else {
            self.imu.retain(|s| s.time >= obs.time);
            if self.imu.first().map(|s| s.time > obs.time).unwrap_or(false) {
                let mut s = self.imu[0];
                s.time = obs.time;
                self.imu.insert(0, s);
            }
        }
        state.time = obs.time;
        let id = self.window.push_keyframe(state.clone(), None)?;
        self.window.prior = Some(MarginalPrior::gauge(id, &state, &self.cfg.prior.as_array()));
        self.associate(id, obs, Some(&hints));
        Ok(self.finish(None, false, 0.0))
    }

    /// IMU samples spanning `[t0, t1]` with both ends present, interpolating
    /// or holding at the boundaries. The buffer keeps a sample at `t1`.
    fn take_imu_until(&mut self, t0: f64, t1: f64) -> Result<Vec<ImuSample>, EstimatorError> {
        let mut seq: Vec<ImuSample> = Vec::new();
        let mut rest: Vec<ImuSample> = Vec::new();
        for s in self.imu.drain(..) {
            if s.time < t0 {
                continue;
            }
            if s.time <= t1 {
                seq.push(s);
            } else {
                rest.push(s);
            }
        }
        let Some(first) = seq.first().copied().or_else(|| rest.first().copied()) else {
            return Err(EstimatorError::EmptyImu);
        };
        if seq.first().map(|s| s.time > t0).unwrap_or(true) {
            let mut s = first;
            s.time = t0;
            seq.insert(0, s);
        }
        let end = match (seq.last(), rest.first()) {
            (Some(a), _) if a.time == t1 => *a,
            (Some(a), Some(b)) => interpolate_imu(a, b, t1),
            (Some(a), None) => ImuSample { time: t1, ..*a },
            (None, _) => unreachable!(),
        };
        if seq.last().unwrap().time < t1 {
            seq.push(end);
        }
        self.imu = std::iter::once(end).chain(rest).collect();
        Ok(seq)
    }

    fn associate(&mut self, id: u64, obs: &CameraObservation, hints: Option<&BTreeMap<u32, Vec3>>) {
        let mut valid: Vec<_> = obs.landmarks.iter().filter(|l| l.valid).collect();
        valid.sort_by_key(|l| l.id);
        for l in &valid {
            if let Some(lm) = self.window.landmarks.get_mut(&l.id) {
                lm.observations.push((id, Vector2::new(l.u, l.v)));
            }
        }
        let idx = self.window.index_of(id).unwrap();
        let state = self.window.keyframes[idx].state.clone();
        let c_from_w = window::world_from_camera(&state, &self.window.extrinsic).inverse();
        for l in &valid {
            if self.window.landmarks.len() >= self.cfg.max_features {
                break;
            }
            if self.window.landmarks.contains_key(&l.id) {
                continue;
            }
            let mut lm = Landmark::new(l.id, id, Vector2::new(l.u, l.v));
            let seed = hints.and_then(|h| h.get(&l.id)).or_else(|| self.retired.get(&l.id));
            if let Some(p_w) = seed {
                let z = c_from_w.apply(p_w).z;
                if z > 0.02 {
                    lm.inverse_depth = (1.0 / z).clamp(window::MIN_INVERSE_DEPTH, window::MAX_INVERSE_DEPTH);
                    lm.has_depth = true;
                }
            }
            self.window.landmarks.insert(l.id, lm);
        }
    }

    /// Two-ray midpoint triangulation between the anchor and the newest view.
    fn triangulate(&mut self) {
        let min_cos = self.cfg.min_parallax_deg.to_radians().cos();
        let w = &self.window;
        let mut updates = Vec::new();
        for lm in w.landmarks.values().filter(|l| !l.has_depth && l.observations.len() >= 2) {
            let (Some(a), Some(b)) = (w.index_of(lm.anchor), w.index_of(lm.observations.last().unwrap().0)) else { continue };
            let ta = window::world_from_camera(&w.keyframes[a].state, &w.extrinsic);
            let tb = window::world_from_camera(&w.keyframes[b].state, &w.extrinsic);
            let da = ta.rotation.rotate(&w.intrinsics.bearing(&lm.anchor_pixel()));
            let db = tb.rotation.rotate(&w.intrinsics.bearing(&lm.observations.last().unwrap().1));
            if da.normalize().dot(&db.normalize()) > min_cos {
                continue;
            }
            // minimize |ca + s da - cb - t db|
            let r = ta.translation - tb.translation;
            let (aa, ab, bb) = (da.dot(&da), da.dot(&db), db.dot(&db));
            let (ar, br) = (da.dot(&r), db.dot(&r));
            let den = aa * bb - ab * ab;
            if den.abs() < 1e-12 {
                continue;
            }
            let s = (ab * br - bb * ar) / den;
            if s > 0.05 && s < 50.0 {
                updates.push((lm.id, 1.0 / s));
            }
        }
        for (id, g) in updates {
            let lm = self.window.landmarks.get_mut(&id).unwrap();
            lm.inverse_depth = g;
            lm.has_depth = true;
        }
    }

    fn retire_and_marginalize(&mut self) -> Result<(), EstimatorError> {
        if self.window.keyframes.len() < self.cfg.solver.window_size {
            return Ok(());
        }
        let first = self.window.keyframes[0].id;
        for lm in self.window.landmarks.values().filter(|l| l.anchor == first) {
            if let Some(p) = self.window.landmark_world_point(lm) {
                self.retired.insert(lm.id, p);
            }
        }
        marginalize_oldest(&mut self.window)?;
        Ok(())
    }

    fn finish(&mut self, solve: Option<SolveReport>, contact_active: bool, contact_weight: f64) -> EstimatorOutput {
        let with_depth = self.window.landmarks.values().filter(|l| l.has_depth).count();
        if with_depth >= self.cfg.min_tracked {
            self.status = EstimatorStatus::Tracking;
        } else if self.status != EstimatorStatus::Tracking {
            self.status = EstimatorStatus::Initializing;
        }
        let state = self.window.newest().unwrap().state.clone();
        let covariance = solve.as_ref().map(|r| r.newest_covariance).unwrap_or_else(|| {
            let s = self.cfg.prior.as_array();
            Matrix15::from_diagonal(&Vector15::from_iterator(s.iter().map(|v| v * v)))
        });
        self.refresh_latest();
        let out = EstimatorOutput {
            state,
            covariance,
            status: self.status,
            contact_active,
            contact_weight,
            landmarks_with_depth: with_depth,
            solve,
        };
        self.last_output = Some(out.clone());
        out
    }
}
