//! Deterministic closed loop: simulator, sensors, estimator, visual servo,
//! hybrid controller and allocation, all ticked from one simulation clock.

use std::collections::BTreeMap;
use std::path::Path;

use aeromanip::control::{ControlInput, HybridController};
use aeromanip::estimator::{normal_force, CameraExtrinsic, Estimator, EstimatorOutput, EstimatorStatus, Intrinsics, NavState};
use aeromanip::geom::Vec3;
use aeromanip::ibvs::{Servo, ServoStatus};
use aeromanip::sim::{
    rng_stream, sample_camera, step_dynamics, Allocator, FtSample, FtSensor, ImuSample, ImuSensor, LandmarkField, RngStream, SimState,
};
use rand::Rng;

use crate::logs::{ControlRow, ForceRow, KeyframeRow, RunLogs, ServoRow, StateRow, ABORT_FILE, SCENARIO_FILE};
use crate::metrics::{compute_metrics, RunMetrics};
use crate::scenario::{Scenario, VelocitySource};
use crate::BenchError;

/// Why a run stopped before its duration.
#[derive(Debug, Clone, PartialEq)]
pub enum Abort {
    /// Non-finite simulation or estimator state.
    Divergence(String),
    /// Target out of view past the servo timeout outside force holding.
    LostTarget(f64),
}

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Abort::Divergence(m) => write!(f, "numerical divergence: {m}"),
            Abort::LostTarget(t) => write!(f, "target lost at {t:.3} s"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: RunMetrics,
    pub logs: RunLogs,
    pub abort: Option<Abort>,
}

impl RunResult {
    /// 0 success, 1 task failure, 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match (&self.abort, self.metrics.success) {
            (Some(Abort::Divergence(_)), _) => 3,
            (_, true) => 0,
            _ => 1,
        }
    }
}

fn status_name(s: EstimatorStatus) -> &'static str {
    match s {
        EstimatorStatus::Uninitialized => "uninitialized",
        EstimatorStatus::Initializing => "initializing",
        EstimatorStatus::Tracking => "tracking",
    }
}

fn servo_name(s: ServoStatus) -> &'static str {
    match s {
        ServoStatus::Tracking => "tracking",
        ServoStatus::Holding => "holding",
        ServoStatus::Lost => "lost",
    }
}

fn keyframe_row(out: &EstimatorOutput, truth: &SimState, contact: bool) -> KeyframeRow {
    let s = &out.state;
    let solve = out.solve.as_ref();
    KeyframeRow {
        t: s.time,
        status: status_name(out.status).into(),
        vx_true: truth.velocity.x,
        vy_true: truth.velocity.y,
        vz_true: truth.velocity.z,
        vx_est: s.velocity.x,
        vy_est: s.velocity.y,
        vz_est: s.velocity.z,
        px_true: truth.position.x,
        py_true: truth.position.y,
        pz_true: truth.position.z,
        px_est: s.position.x,
        py_est: s.position.y,
        pz_est: s.position.z,
        contact_detected: contact,
        contact_factor: out.contact_active,
        contact_weight: out.contact_weight,
        landmarks_with_depth: out.landmarks_with_depth,
        iterations: solve.map(|r| r.iterations).unwrap_or(0),
        initial_cost: solve.map(|r| r.initial_cost).unwrap_or(0.0),
        final_cost: solve.map(|r| r.final_cost).unwrap_or(0.0),
        cost_monotone: solve.map(|r| r.monotone).unwrap_or(true),
    }
}

/// Runs one scenario to completion or abort. Logs and metrics are written
/// under `out_dir` when given, also for aborted runs.
pub fn run_scenario(scn: &Scenario, out_dir: Option<&Path>) -> Result<RunResult, BenchError> {
    scn.validate()?;
    let mut logs = RunLogs::default();
    let abort = simulate(scn, &mut logs)?;
    let metrics = compute_metrics(&logs, scn, abort.as_ref().map(|a| a.to_string()).as_deref());
    if let Some(dir) = out_dir {
        logs.write(dir)?;
        std::fs::write(dir.join(SCENARIO_FILE), scn.to_toml())?;
        metrics.write(dir)?;
        let abort_path = dir.join(ABORT_FILE);
        match &abort {
            Some(a) => std::fs::write(abort_path, a.to_string())?,
            None if abort_path.exists() => std::fs::remove_file(abort_path)?,
            None => {}
        }
    }
    Ok(RunResult { metrics, logs, abort })
}

fn simulate(scn: &Scenario, logs: &mut RunLogs) -> Result<Option<Abort>, BenchError> {
    let cfg_err = |e: String| BenchError::Config(e);
    let rates = &scn.rates;
    let dt = rates.dt();
    let params = &scn.vehicle;
    let wall = &scn.wall;
    let cam = &scn.camera;
    let n_ticks = (scn.duration * rates.sim as f64).round() as u64;

    let allocator = Allocator::new(params).map_err(|e| cfg_err(e.to_string()))?;
    let field = LandmarkField::generate(&scn.landmarks, wall, &mut rng_stream(scn.seed, RngStream::Landmarks));
    let mut imu = ImuSensor::new(scn.noise.imu.clone(), scn.seed);
    let mut ft = FtSensor::new(scn.noise.ft.clone(), scn.seed);
    let mut cam_rng = rng_stream(scn.seed, RngStream::Camera);
    let mut vel_rng = rng_stream(scn.seed, RngStream::VelocityNoise);

    let mut estimator = Estimator::new(
        scn.estimator.clone(),
        Intrinsics { fx: cam.fx, fy: cam.fy, cx: cam.cx, cy: cam.cy },
        CameraExtrinsic::fixed(cam.body_from_camera),
        params.ft_rotation,
        wall.normal,
    )
    .map_err(|e| cfg_err(e.to_string()))?;
    let mut servo = Servo::new(scn.servo.clone(), cam.body_from_camera.rotation).map_err(|e| cfg_err(e.to_string()))?;
    let mut controller = HybridController::new(scn.control.clone(), 0.0).map_err(|e| cfg_err(e.to_string()))?;

    let start = Vec3::from_row_slice(&scn.start_position);
    let mut state = SimState::at_rest(start);
    let hints: BTreeMap<u32, Vec3> = field.points.iter().map(|(i, p)| (*i, *p)).collect();
    estimator.initialize(NavState::new(0.0, state.position, state.velocity, state.orientation), hints);

    let mut imu_batch: Vec<ImuSample> = Vec::new();
    let mut ft_batch: Vec<FtSample> = Vec::new();
    let mut last_imu: Option<ImuSample> = None;
    let mut last_ft: Option<FtSample> = None;
    let mut servo_out = servo.update(0.0, &aeromanip::sim::TargetObservation::invalid());
    let mut rotor_cmd = state.rotor_speeds;
    let mut phase_name = "approach".to_string();
    let control_dt = 1.0 / rates.control as f64;

    for k in 0..=n_ticks {
        let t = k as f64 * dt;
        state.time = t;
        if rates.fires(k, rates.imu) {
            let s = imu.sample(&state);
            imu_batch.push(s);
            last_imu = Some(s);
        }
        if rates.fires(k, rates.ft) {
            let s = ft.sample(&state);
            let f = normal_force(&s, &wall.normal, &state.orientation, &params.ft_rotation);
            logs.force.push(ForceRow { t, f_measured: f, f_reference: scn.control.impedance.reference_force });
            ft_batch.push(s);
            last_ft = Some(s);
        }
        if rates.fires(k, rates.camera) {
            let obs = sample_camera(&state, wall, &field, cam, &scn.noise.camera, &mut cam_rng);
            match estimator.step(&imu_batch, &obs, &ft_batch, &wall.normal) {
                Ok(Some(out)) => logs.keyframes.push(keyframe_row(&out, &state, estimator.contact_on())),
                Ok(None) => {}
                Err(e) => return Ok(Some(Abort::Divergence(format!("estimator at {t:.3} s: {e}")))),
            }
            imu_batch.clear();
            ft_batch.clear();
            servo_out = servo.update(t, &obs.target);
            let e = servo_out.error.unwrap_or_default();
            let depth = servo_out.feature.map(|f| f.depth).unwrap_or(f64::NAN);
            let lambda = logs.control.last().map(|c| c.lambda).unwrap_or(0.0);
            let (vc, cl) = (servo_out.twist.camera, servo_out.twist.clamped);
            logs.servo.push(ServoRow {
                t,
                status: servo_name(servo_out.status).into(),
                e_u: e[0],
                e_v: e[1],
                e_r: e[2],
                depth,
                lambda,
                vc_x: vc[0],
                vc_y: vc[1],
                vc_z: vc[2],
                wc_x: vc[3],
                wc_y: vc[4],
                wc_z: vc[5],
                clamp_vx: cl[0],
                clamp_vy: cl[1],
                clamp_vz: cl[2],
                clamp_wx: cl[3],
                clamp_wy: cl[4],
                clamp_wz: cl[5],
            });
        }
        if rates.fires(k, rates.control) {
            if servo_out.status == ServoStatus::Lost && phase_name != "force_hold" {
                return Ok(Some(Abort::LostTarget(t)));
            }
            let latest = estimator.latest().cloned();
            let (mut velocity, attitude, rate) = match (scn.velocity_source, &latest) {
                (VelocitySource::Estimator, Some(x)) => {
                    let gyro = last_imu.map(|s| s.angular_rate).unwrap_or_default();
                    (x.velocity, x.orientation, gyro - x.gyro_bias)
                }
                _ => (state.velocity, state.orientation, state.angular_velocity),
            };
            // Drawn on every tick so that the stream never depends on the bounds.
            let u: [f64; 3] = [vel_rng.random(), vel_rng.random(), vel_rng.random()];
            for i in 0..3 {
                velocity[i] += scn.velocity_noise[i] * (2.0 * u[i] - 1.0);
            }
            let force = last_ft.map(|s| normal_force(&s, &wall.normal, &attitude, &params.ft_rotation)).unwrap_or(0.0);
            let out = controller.tick(&ControlInput {
                time: t,
                dt: control_dt,
                velocity_w: velocity,
                attitude,
                angular_rate: rate,
                servo: &servo_out,
                normal_force: force,
                contact: estimator.contact_on(),
                wall_normal: wall.normal,
            });
            let alloc = allocator.allocate(&out.wrench.total);
            rotor_cmd = alloc.speeds;
            phase_name = out.phase.as_str().to_string();

            let (roll, pitch, yaw) = state.orientation.euler();
            let est_v = latest.as_ref().map(|x| x.velocity).unwrap_or_else(|| Vec3::repeat(f64::NAN));
            logs.state.push(StateRow {
                t,
                phase: phase_name.clone(),
                px: state.position.x,
                py: state.position.y,
                pz: state.position.z,
                vx: state.velocity.x,
                vy: state.velocity.y,
                vz: state.velocity.z,
                vx_fed: velocity.x,
                vy_fed: velocity.y,
                vz_fed: velocity.z,
                vx_est: est_v.x,
                vy_est: est_v.y,
                vz_est: est_v.z,
                roll_deg: roll.to_degrees(),
                pitch_deg: pitch.to_degrees(),
                yaw_deg: yaw.to_degrees(),
                contact_detected: estimator.contact_on(),
                contact_true: state.in_contact,
            });
            let (m, w, r) = (out.wrench.motion, out.wrench.total, alloc.speeds);
            logs.control.push(ControlRow {
                t,
                phase: phase_name.clone(),
                lambda: out.wrench.lambda,
                vs_fx: m[0],
                vs_fy: m[1],
                vs_fz: m[2],
                vs_mx: m[3],
                vs_my: m[4],
                vs_mz: m[5],
                f_f: out.f_f,
                fx: w[0],
                fy: w[1],
                fz: w[2],
                mx: w[3],
                my: w[4],
                mz: w[5],
                rotor_1: r[0],
                rotor_2: r[1],
                rotor_3: r[2],
                rotor_4: r[3],
                rotor_5: r[4],
                rotor_6: r[5],
                saturated: alloc.saturated,
            });
        }
        if k == n_ticks {
            break;
        }
        state = match step_dynamics(&state, &rotor_cmd, Some(wall), params, &allocator, dt) {
            Ok(s) => s,
            Err(e) => return Ok(Some(Abort::Divergence(format!("simulation at {t:.3} s: {e}")))),
        };
    }
    Ok(None)
}
