use serde::{Deserialize, Serialize};

use super::ControlError;

/// Impedance force law on the contact normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpedanceConfig {
    /// Reference normal force [N].
    pub reference_force: f64,
    /// Stiffness on the scaling error [N/px].
    pub k_ep: f64,
    /// Damping on the scaling-error rate [N s/px].
    pub k_ed: f64,
    /// Proportional force gain.
    pub k_fp: f64,
    /// Integral force gain [1/s].
    pub k_fi: f64,
    /// Bound on the integral term [N].
    pub integral_limit: f64,
}

impl Default for ImpedanceConfig {
    fn default() -> Self {
        Self { reference_force: 5.0, k_ep: 0.05, k_ed: 0.02, k_fp: 0.5, k_fi: 2.0, integral_limit: 5.0 }
    }
}

impl ImpedanceConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.k_ep >= 0.0 && self.k_ed >= 0.0) {
            return Err(ControlError::InvalidConfig("impedance gains must be non-negative".into()));
        }
        if !(self.k_fp > 0.0 && self.k_fi > 0.0) {
            return Err(ControlError::InvalidConfig("force gains must be positive".into()));
        }
        if !(self.integral_limit >= 0.0 && self.reference_force.is_finite()) {
            return Err(ControlError::InvalidConfig("integral limit must be non-negative".into()));
        }
        Ok(())
    }
}

/// Impedance controller with a trapezoidal, clamped force-error integral.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceForce {
    cfg: ImpedanceConfig,
    /// Integral of the force error [N s]; `k_fi * integral` stays within the
    /// configured limit.
    integral: f64,
    prev_error: Option<f64>,
}

impl ImpedanceForce {
    pub fn new(cfg: ImpedanceConfig) -> Result<Self, ControlError> {
        cfg.validate()?;
        Ok(Self { cfg, integral: 0.0, prev_error: None })
    }

    pub fn config(&self) -> &ImpedanceConfig {
        &self.cfg
    }

    /// Current integral term `k_fi * int(e_f)` [N].
    pub fn integral_term(&self) -> f64 {
        self.cfg.k_fi * self.integral
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// Commanded normal force for a measured force `f`, scaling error `e_x`
    /// and its rate. The integral advances by `dt` with the trapezoid rule.
    pub fn update(&mut self, f: f64, e_x: f64, e_x_rate: f64, dt: f64) -> f64 {
        let c = &self.cfg;
        let e_f = f - c.reference_force;
        let prev = self.prev_error.unwrap_or(e_f);
        let bound = c.integral_limit / c.k_fi;
        self.integral = (self.integral + 0.5 * (prev + e_f) * dt).clamp(-bound, bound);
        self.prev_error = Some(e_f);
        c.reference_force - c.k_ep * e_x - c.k_ed * e_x_rate - c.k_fp * e_f - c.k_fi * self.integral
    }
}

/// One-shot evaluation with a given integral state, for inspection.
pub fn impedance_force(f: f64, e_x: f64, e_x_rate: f64, integral: f64, cfg: &ImpedanceConfig) -> f64 {
    cfg.reference_force - cfg.k_ep * e_x - cfg.k_ed * e_x_rate - cfg.k_fp * (f - cfg.reference_force) - cfg.k_fi * integral
}

/// Derivative through a first-order low-pass filter.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFilter {
    /// Filter time constant [s].
    tau: f64,
    prev: Option<(f64, f64)>,
    rate: f64,
}

impl RateFilter {
    pub fn with_cutoff(hz: f64) -> Self {
        Self { tau: 1.0 / (2.0 * std::f64::consts::PI * hz), prev: None, rate: 0.0 }
    }

    /// Feeds a sample taken at `time`; repeated or older samples leave the
    /// estimate unchanged.
    pub fn update(&mut self, time: f64, x: f64) -> f64 {
        match self.prev {
            Some((t0, x0)) if time > t0 => {
                let dt = time - t0;
                let a = dt / (self.tau + dt);
                self.rate += a * ((x - x0) / dt - self.rate);
                self.prev = Some((time, x));
            }
            Some(_) => {}
            None => self.prev = Some((time, x)),
        }
        self.rate
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn reset(&mut self) {
        self.prev = None;
        self.rate = 0.0;
    }
}
