use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SimState;
use crate::geom::{gravity_w, Vec3};

/// Independent random streams. Every consumer draws from its own stream so
/// that enabling or disabling one consumer never shifts another's samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    Imu = 1,
    ForceTorque = 2,
    Camera = 3,
    Landmarks = 4,
    VelocityNoise = 5,
    EstimatorInit = 6,
}

pub fn rng_stream(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn gaussian3<R: Rng>(rng: &mut R, sigma: f64) -> Vec3 {
    let mut v = Vec3::zeros();
    for i in 0..3 {
        let n: f64 = rng.sample(StandardNormal);
        v[i] = sigma * n;
    }
    v
}

/// Inertial sensor noise. White-noise sigmas are per sample; random-walk
/// sigmas are per square-root second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImuNoise {
    /// [m/s^2]
    pub accel_sigma: f64,
    /// [rad/s]
    pub gyro_sigma: f64,
    /// [m/s^2/sqrt(s)]
    pub accel_bias_walk: f64,
    /// [rad/s/sqrt(s)]
    pub gyro_bias_walk: f64,
    pub accel_bias_init: Vec3,
    pub gyro_bias_init: Vec3,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            accel_sigma: 0.04,
            gyro_sigma: 0.003,
            accel_bias_walk: 2e-4,
            gyro_bias_walk: 2e-5,
            accel_bias_init: Vec3::new(0.04, -0.03, 0.05),
            gyro_bias_init: Vec3::new(0.002, -0.0015, 0.001),
        }
    }
}

impl ImuNoise {
    pub fn noiseless() -> Self {
        Self {
            accel_sigma: 0.0,
            gyro_sigma: 0.0,
            accel_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_init: Vec3::zeros(),
            gyro_bias_init: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FtNoise {
    /// [N]
    pub force_sigma: f64,
    /// [N m]
    pub torque_sigma: f64,
}

impl Default for FtNoise {
    fn default() -> Self {
        Self { force_sigma: 0.1, torque_sigma: 0.005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraNoise {
    /// Landmark pixel noise [px].
    pub pixel_sigma: f64,
    /// Circle center noise [px].
    pub target_center_sigma: f64,
    /// Circle radius noise [px].
    pub target_radius_sigma: f64,
}

impl Default for CameraNoise {
    fn default() -> Self {
        Self { pixel_sigma: 0.7, target_center_sigma: 0.1, target_radius_sigma: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorNoise {
    pub imu: ImuNoise,
    pub ft: FtNoise,
    pub camera: CameraNoise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// [s]
    pub time: f64,
    /// Specific force, body frame [m/s^2].
    pub specific_force: Vec3,
    /// Angular rate, body frame [rad/s].
    pub angular_rate: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtSample {
    /// [s]
    pub time: f64,
    /// Sensor frame [N].
    pub force: Vec3,
    /// Sensor frame [N m].
    pub torque: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuBiases {
    pub accel: Vec3,
    pub gyro: Vec3,
}

/// Draws one IMU sample and advances the bias random walk by `dt`.
pub fn sample_imu<R: Rng>(state: &SimState, accel_w: &Vec3, noise: &ImuNoise, biases: &mut ImuBiases, dt: f64, rng: &mut R) -> ImuSample {
    let r_bw = state.orientation.inverse();
    let specific_force = r_bw.rotate(&(accel_w - gravity_w())) + biases.accel + gaussian3(rng, noise.accel_sigma);
    let angular_rate = state.angular_velocity + biases.gyro + gaussian3(rng, noise.gyro_sigma);
    biases.accel += gaussian3(rng, noise.accel_bias_walk * dt.sqrt());
    biases.gyro += gaussian3(rng, noise.gyro_bias_walk * dt.sqrt());
    ImuSample { time: state.time, specific_force, angular_rate }
}

/// Seeded IMU with its own bias state.
#[derive(Debug, Clone)]
pub struct ImuSensor {
    noise: ImuNoise,
    biases: ImuBiases,
    rng: ChaCha8Rng,
    last_time: Option<f64>,
}

impl ImuSensor {
    pub fn new(noise: ImuNoise, seed: u64) -> Self {
        let biases = ImuBiases { accel: noise.accel_bias_init, gyro: noise.gyro_bias_init };
        Self { noise, biases, rng: rng_stream(seed, RngStream::Imu), last_time: None }
    }

    pub fn biases(&self) -> ImuBiases {
        self.biases
    }

    pub fn sample(&mut self, state: &SimState) -> ImuSample {
        let dt = self.last_time.map(|t| state.time - t).unwrap_or(0.0).max(0.0);
        self.last_time = Some(state.time);
        sample_imu(state, &state.acceleration, &self.noise, &mut self.biases, dt, &mut self.rng)
    }
}

/// True wrench plus white noise on every axis.
pub fn sample_ft<R: Rng>(time: f64, wrench_s: &Vector6<f64>, noise: &FtNoise, rng: &mut R) -> FtSample {
    let f = Vec3::new(wrench_s[0], wrench_s[1], wrench_s[2]);
    let t = Vec3::new(wrench_s[3], wrench_s[4], wrench_s[5]);
    FtSample { time, force: f + gaussian3(rng, noise.force_sigma), torque: t + gaussian3(rng, noise.torque_sigma) }
}

#[derive(Debug, Clone)]
pub struct FtSensor {
    noise: FtNoise,
    rng: ChaCha8Rng,
}

impl FtSensor {
    pub fn new(noise: FtNoise, seed: u64) -> Self {
        Self { noise, rng: rng_stream(seed, RngStream::ForceTorque) }
    }

    pub fn sample(&mut self, state: &SimState) -> FtSample {
        sample_ft(state.time, &state.contact_wrench_s, &self.noise, &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::GRAVITY;

    #[test]
    fn hover_reads_plus_g() {
        let s = SimState::at_rest(Vec3::zeros());
        let mut b = ImuBiases { accel: Vec3::zeros(), gyro: Vec3::zeros() };
        let mut rng = rng_stream(1, RngStream::Imu);
        let m = sample_imu(&s, &Vec3::zeros(), &ImuNoise::noiseless(), &mut b, 0.002, &mut rng);
        assert!((m.specific_force - Vec3::new(0.0, 0.0, GRAVITY)).norm() < 1e-12);
        assert_eq!(m.angular_rate, Vec3::zeros());
    }

    #[test]
    fn free_fall_reads_zero() {
        let s = SimState::at_rest(Vec3::zeros());
        let mut b = ImuBiases { accel: Vec3::zeros(), gyro: Vec3::zeros() };
        let mut rng = rng_stream(1, RngStream::Imu);
        let m = sample_imu(&s, &gravity_w(), &ImuNoise::noiseless(), &mut b, 0.002, &mut rng);
        assert!(m.specific_force.norm() < 1e-12);
    }

    #[test]
    fn imu_stream_is_reproducible() {
        let mut s = SimState::at_rest(Vec3::zeros());
        let mut a = ImuSensor::new(ImuNoise::default(), 42);
        let mut b = ImuSensor::new(ImuNoise::default(), 42);
        for k in 0..100 {
            s.time = k as f64 * 0.002;
            let (x, y) = (a.sample(&s), b.sample(&s));
            assert_eq!(x.specific_force.as_slice(), y.specific_force.as_slice());
            assert_eq!(x.angular_rate.as_slice(), y.angular_rate.as_slice());
        }
    }

    #[test]
    fn ft_zero_without_noise() {
        let mut rng = rng_stream(3, RngStream::ForceTorque);
        let s = sample_ft(0.0, &Vector6::zeros(), &FtNoise { force_sigma: 0.0, torque_sigma: 0.0 }, &mut rng);
        assert_eq!(s.force, Vec3::zeros());
        assert_eq!(s.torque, Vec3::zeros());
    }

    #[test]
    fn ft_mean_converges_to_true_force() {
        let mut rng = rng_stream(7, RngStream::ForceTorque);
        let w = Vector6::new(5.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let noise = FtNoise { force_sigma: 0.1, torque_sigma: 0.0 };
        let mean: f64 = (0..1000).map(|_| sample_ft(0.0, &w, &noise, &mut rng).force.x).sum::<f64>() / 1000.0;
        assert!((mean - 5.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn ft_stream_is_reproducible() {
        let w = Vector6::new(5.0, 0.1, 0.0, 0.0, 0.0, 0.0);
        let mut a = rng_stream(9, RngStream::ForceTorque);
        let mut b = rng_stream(9, RngStream::ForceTorque);
        for _ in 0..50 {
            assert_eq!(sample_ft(0.0, &w, &FtNoise::default(), &mut a), sample_ft(0.0, &w, &FtNoise::default(), &mut b));
        }
    }

    #[test]
    fn streams_are_independent() {
        let mut a = rng_stream(5, RngStream::Imu);
        let mut b = rng_stream(5, RngStream::Camera);
        let x: u64 = a.random();
        let y: u64 = b.random();
        assert_ne!(x, y);
    }
}
