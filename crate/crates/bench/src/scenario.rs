//! Scenario files: one TOML document per run, versioned and fail-closed.

use std::path::Path;

use aeromanip::control::ControlConfig;
use aeromanip::estimator::EstimatorConfig;
use aeromanip::ibvs::ServoConfig;
use aeromanip::sim::{CameraModel, LandmarkFieldConfig, SensorNoise, VehicleParams, WallModel};
use serde::{Deserialize, Serialize};

use crate::BenchError;

pub const SCHEMA_VERSION: u32 = 1;

/// Source of the velocity and attitude fed back to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocitySource {
    #[default]
    GroundTruth,
    Estimator,
}

/// Loop rates. Every rate divides into whole simulation ticks on average;
/// a sensor fires on the tick where its sample counter advances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Rates {
    /// [Hz]
    pub sim: u64,
    /// [Hz]
    pub imu: u64,
    /// [Hz]
    pub ft: u64,
    /// [Hz]
    pub camera: u64,
    /// [Hz]
    pub control: u64,
}

impl Default for Rates {
    fn default() -> Self {
        Self { sim: 1000, imu: 500, ft: 200, camera: 30, control: 250 }
    }
}

impl Rates {
    /// Whether a stream running at `hz` fires on simulation tick `k`.
    pub fn fires(&self, k: u64, hz: u64) -> bool {
        k == 0 || (k * hz) / self.sim != ((k - 1) * hz) / self.sim
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sim as f64
    }
}

/// Pass thresholds for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuccessCriteria {
    /// Allowed deviation from the reference force [N].
    pub force_band: f64,
    /// Required share of the hold interval inside the band.
    pub band_fraction: f64,
    /// Length of the closing window for the mean-force check [s].
    pub final_window: f64,
    /// Allowed error of the closing-window mean force [N].
    pub final_mean_tolerance: f64,
    /// Largest roll or pitch while force holding [deg].
    pub max_tilt_deg: f64,
}

impl Default for SuccessCriteria {
    fn default() -> Self {
        Self { force_band: 1.0, band_fraction: 0.95, final_window: 10.0, final_mean_tolerance: 0.3, max_tilt_deg: 3.0 }
    }
}

fn default_duration() -> f64 {
    60.0
}

fn default_start() -> [f64; 3] {
    [-2.2, 0.25, 1.35]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    /// [s]
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub velocity_source: VelocitySource,
    /// Bounds of the uniform noise added to the fed-back world velocity [m/s].
    #[serde(default)]
    pub velocity_noise: [f64; 3],
    /// Initial body position, at rest and level [m].
    #[serde(default = "default_start")]
    pub start_position: [f64; 3],
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub camera: CameraModel,
    #[serde(default)]
    pub wall: WallModel,
    #[serde(default)]
    pub landmarks: LandmarkFieldConfig,
    #[serde(default)]
    pub noise: SensorNoise,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub servo: ServoConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub success: SuccessCriteria,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let scn: Scenario = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Checked-in preset by name.
    pub fn preset(name: &str) -> Result<Self, BenchError> {
        let text = match name {
            "peg_in_hole_baseline" => include_str!("../scenarios/peg_in_hole_baseline.toml"),
            "noise1" => include_str!("../scenarios/noise1.toml"),
            "noise2" => include_str!("../scenarios/noise2.toml"),
            "feature_sparse_contact" => include_str!("../scenarios/feature_sparse_contact.toml"),
            "ablation_contact_factor" => include_str!("../scenarios/ablation_contact_factor.toml"),
            _ => return Err(BenchError::Config(format!("unknown preset {name}"))),
        };
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return bad(format!("scenario name {:?} must be non-empty ASCII letters, digits, '_' or '-'", self.name));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive".into());
        }
        if self.velocity_noise.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return bad("velocity noise bounds must be non-negative".into());
        }
        if self.start_position.iter().any(|x| !x.is_finite()) {
            return bad("start position must be finite".into());
        }
        let r = &self.rates;
        if r.sim == 0 || [r.imu, r.ft, r.camera, r.control].iter().any(|hz| *hz == 0 || *hz > r.sim) {
            return bad("rates must be positive and not exceed the simulation rate".into());
        }
        if r.sim < 100 {
            return bad("simulation rate must be at least 100 Hz".into());
        }
        self.vehicle.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        if !self.camera.is_valid() {
            return bad("camera intrinsics must be positive".into());
        }
        if !(self.wall.normal.norm() > 0.0 && self.wall.stiffness > 0.0 && self.wall.target_outer_radius > 0.0) {
            return bad("wall needs a normal, positive stiffness and a target".into());
        }
        self.estimator.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.servo.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.control.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        let s = &self.servo;
        let c = &self.camera;
        if (s.fx, s.fy, s.cx, s.cy) != (c.fx, c.fy, c.cx, c.cy) {
            return bad("servo intrinsics must match the camera".into());
        }
        let sc = &self.success;
        if !(sc.force_band > 0.0 && sc.band_fraction > 0.0 && sc.band_fraction <= 1.0 && sc.final_window > 0.0) {
            return bad("success criteria must be positive".into());
        }
        Ok(())
    }
}
