//! Per-run CSV logs. Every row type round-trips through its CSV file, so the
//! metrics can be recomputed from a log directory alone.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::BenchError;

pub const STATE_LOG: &str = "state.csv";
pub const KEYFRAME_LOG: &str = "estimator.csv";
pub const SERVO_LOG: &str = "servo.csv";
pub const CONTROL_LOG: &str = "control.csv";
pub const FORCE_LOG: &str = "force.csv";
pub const SCENARIO_FILE: &str = "scenario.toml";
/// Present only for aborted runs; holds the reason.
pub const ABORT_FILE: &str = "abort.txt";

/// Vehicle truth and feedback at the control rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub t: f64,
    pub phase: String,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    /// Velocity handed to the controller.
    pub vx_fed: f64,
    pub vy_fed: f64,
    pub vz_fed: f64,
    /// IMU-propagated estimator velocity.
    pub vx_est: f64,
    pub vy_est: f64,
    pub vz_est: f64,
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub contact_detected: bool,
    pub contact_true: bool,
}

/// Estimator output at every keyframe with the truth at the same tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeRow {
    pub t: f64,
    pub status: String,
    pub vx_true: f64,
    pub vy_true: f64,
    pub vz_true: f64,
    pub vx_est: f64,
    pub vy_est: f64,
    pub vz_est: f64,
    pub px_true: f64,
    pub py_true: f64,
    pub pz_true: f64,
    pub px_est: f64,
    pub py_est: f64,
    pub pz_est: f64,
    pub contact_detected: bool,
    pub contact_factor: bool,
    pub contact_weight: f64,
    pub landmarks_with_depth: usize,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub cost_monotone: bool,
}

/// Servo state at the camera rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoRow {
    pub t: f64,
    pub status: String,
    pub e_u: f64,
    pub e_v: f64,
    pub e_r: f64,
    pub depth: f64,
    pub lambda: f64,
    pub vc_x: f64,
    pub vc_y: f64,
    pub vc_z: f64,
    pub wc_x: f64,
    pub wc_y: f64,
    pub wc_z: f64,
    pub clamp_vx: bool,
    pub clamp_vy: bool,
    pub clamp_vz: bool,
    pub clamp_wx: bool,
    pub clamp_wy: bool,
    pub clamp_wz: bool,
}

/// Controller output at the control rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub t: f64,
    pub phase: String,
    pub lambda: f64,
    pub vs_fx: f64,
    pub vs_fy: f64,
    pub vs_fz: f64,
    pub vs_mx: f64,
    pub vs_my: f64,
    pub vs_mz: f64,
    pub f_f: f64,
    pub fx: f64,
    pub fy: f64,
    pub fz: f64,
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
    pub rotor_1: f64,
    pub rotor_2: f64,
    pub rotor_3: f64,
    pub rotor_4: f64,
    pub rotor_5: f64,
    pub rotor_6: f64,
    pub saturated: bool,
}

/// Measured normal force at the F/T rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceRow {
    pub t: f64,
    pub f_measured: f64,
    pub f_reference: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLogs {
    pub state: Vec<StateRow>,
    pub keyframes: Vec<KeyframeRow>,
    pub servo: Vec<ServoRow>,
    pub control: Vec<ControlRow>,
    pub force: Vec<ForceRow>,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(BenchError::from)).collect()
}

impl RunLogs {
    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir)?;
        write_rows(&dir.join(STATE_LOG), &self.state)?;
        write_rows(&dir.join(KEYFRAME_LOG), &self.keyframes)?;
        write_rows(&dir.join(SERVO_LOG), &self.servo)?;
        write_rows(&dir.join(CONTROL_LOG), &self.control)?;
        write_rows(&dir.join(FORCE_LOG), &self.force)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, BenchError> {
        Ok(Self {
            state: read_rows(&dir.join(STATE_LOG))?,
            keyframes: read_rows(&dir.join(KEYFRAME_LOG))?,
            servo: read_rows(&dir.join(SERVO_LOG))?,
            control: read_rows(&dir.join(CONTROL_LOG))?,
            force: read_rows(&dir.join(FORCE_LOG))?,
        })
    }
}
