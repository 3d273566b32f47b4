use serde::{Deserialize, Serialize};

use super::EstimatorError;
use crate::geom::{UnitQuaternion, Vec3};
use crate::sim::FtSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactDetectorConfig {
    /// [N]
    pub on_threshold: f64,
    /// [N]
    pub off_threshold: f64,
    /// [s]
    pub dwell: f64,
}

impl Default for ContactDetectorConfig {
    fn default() -> Self {
        Self { on_threshold: 2.0, off_threshold: 0.5, dwell: 0.05 }
    }
}

impl ContactDetectorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.on_threshold > self.off_threshold && self.off_threshold >= 0.0 && self.dwell >= 0.0) {
            return Err(EstimatorError::InvalidConfig("contact thresholds need on > off >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactEvent {
    On,
    Off,
}

/// Threshold detector with hysteresis and a dwell filter on the normal
/// force. The force must stay past the relevant threshold for `dwell`
/// seconds before the state flips.
#[derive(Debug, Clone)]
pub struct ContactDetector {
    cfg: ContactDetectorConfig,
    on: bool,
    /// Start of the current candidate interval.
    pending_since: Option<f64>,
    last_change: Option<f64>,
}

impl ContactDetector {
    pub fn new(cfg: ContactDetectorConfig) -> Result<Self, EstimatorError> {
        cfg.validate()?;
        Ok(Self { cfg, on: false, pending_since: None, last_change: None })
    }

    pub fn is_on(&self) -> bool {
        self.on
    }

    pub fn config(&self) -> &ContactDetectorConfig {
        &self.cfg
    }

    /// Time of the most recent state change.
    pub fn last_change(&self) -> Option<f64> {
        self.last_change
    }

    /// Feeds one compressive normal-force reading; returns the new event
    /// when the state flips.
    pub fn update(&mut self, time: f64, normal_force: f64) -> Option<ContactEvent> {
        let crossing = if self.on { normal_force <= self.cfg.off_threshold } else { normal_force >= self.cfg.on_threshold };
        if !crossing {
            self.pending_since = None;
            return None;
        }
        let since = *self.pending_since.get_or_insert(time);
        if time - since >= self.cfg.dwell - 1e-9 {
            self.on = !self.on;
            self.pending_since = None;
            self.last_change = Some(time);
            return Some(if self.on { ContactEvent::On } else { ContactEvent::Off });
        }
        None
    }
}

/// Compressive force along the wall normal measured by the F/T sensor.
///
/// `n_w` is the outward wall normal in the world frame, `r_wb` the body
/// attitude and `r_bs` the sensor mounting. The wall pushes the tool along
/// `n_w`, so the reading along it is positive in contact.
pub fn normal_force(sample: &FtSample, n_w: &Vec3, r_wb: &UnitQuaternion, r_bs: &UnitQuaternion) -> f64 {
    let n_s = r_bs.inverse().rotate(&r_wb.inverse().rotate(n_w));
    sample.force.dot(&n_s)
}

/// Runs the detector over a force stream and returns the state after every
/// sample.
pub fn detect_contact(forces: &[(f64, f64)], cfg: &ContactDetectorConfig) -> Result<Vec<bool>, EstimatorError> {
    let mut d = ContactDetector::new(cfg.clone())?;
    Ok(forces
        .iter()
        .map(|&(t, f)| {
            d.update(t, f);
            d.is_on()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(f: impl Fn(f64) -> f64, duration: f64) -> Vec<(f64, f64)> {
        (0..=(duration * 1000.0) as usize).map(|k| k as f64 * 1e-3).map(|t| (t, f(t))).collect()
    }

    fn first_on(forces: &[(f64, f64)], states: &[bool]) -> Option<f64> {
        states.iter().position(|&s| s).map(|i| forces[i].0)
    }

    #[test]
    fn step_turns_on_after_dwell() {
        let f = stream(|t| if t >= 0.1 { 5.0 } else { 0.0 }, 0.3);
        let s = detect_contact(&f, &ContactDetectorConfig::default()).unwrap();
        assert!((first_on(&f, &s).unwrap() - 0.15).abs() < 1e-9);
    }

    #[test]
    fn short_spike_is_ignored() {
        let f = stream(|t| if (t - 0.1).abs() < 1e-4 { 3.0 } else { 0.0 }, 0.3);
        let s = detect_contact(&f, &ContactDetectorConfig::default()).unwrap();
        assert!(s.iter().all(|&x| !x));
    }

    #[test]
    fn hysteresis_holds_on_state() {
        let cfg = ContactDetectorConfig { off_threshold: 1.0, ..Default::default() };
        let f = stream(
            |t| {
                if t < 0.1 {
                    3.0
                } else if ((t * 1000.0) as usize).is_multiple_of(2) {
                    1.9
                } else {
                    2.1
                }
            },
            1.0,
        );
        let s = detect_contact(&f, &cfg).unwrap();
        let on = s.iter().position(|&x| x).unwrap();
        assert!(s[on..].iter().all(|&x| x));
    }

    #[test]
    fn release_turns_off_after_dwell() {
        let f = stream(|t| if t < 0.5 { 5.0 } else { 0.0 }, 1.0);
        let s = detect_contact(&f, &ContactDetectorConfig::default()).unwrap();
        let last_on = s.iter().rposition(|&x| x).unwrap();
        assert!((f[last_on].0 - 0.549).abs() < 1e-9);
    }

    #[test]
    fn rejects_inverted_thresholds() {
        let cfg = ContactDetectorConfig { on_threshold: 0.5, off_threshold: 2.0, dwell: 0.05 };
        assert!(ContactDetector::new(cfg).is_err());
    }

    #[test]
    fn normal_force_in_level_attitude() {
        let s = FtSample { time: 0.0, force: Vec3::new(-5.0, 0.0, 0.0), torque: Vec3::zeros() };
        let f = normal_force(&s, &Vec3::new(-1.0, 0.0, 0.0), &UnitQuaternion::identity(), &UnitQuaternion::identity());
        assert!((f - 5.0).abs() < 1e-12);
    }
}
