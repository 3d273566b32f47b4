//! Run metrics: contact-axis velocity error statistics, force tracking and
//! task success.

use std::collections::BTreeMap;
use std::path::Path;

use aeromanip::geom::{UnitQuaternion, Vec3};
use serde::{Deserialize, Serialize};

use crate::logs::RunLogs;
use crate::scenario::Scenario;
use crate::BenchError;

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TXT: &str = "metrics.txt";

/// Statistics of a signed error over its absolute values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub rmse: f64,
    /// Mean of `|e|`.
    pub mean: f64,
    /// Largest `|e|`.
    pub max: f64,
    /// Population standard deviation of `|e|`.
    pub std: f64,
    pub samples: usize,
}

/// `None` for an empty series.
pub fn error_stats(errors: &[f64]) -> Option<ErrorStats> {
    if errors.is_empty() {
        return None;
    }
    let n = errors.len() as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let max = errors.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let var = errors.iter().map(|e| (e.abs() - mean).powi(2)).sum::<f64>() / n;
    Some(ErrorStats { rmse, mean, max, std: var.sqrt(), samples: errors.len() })
}

/// Sample of `series` (sorted by time) closest to `t`, if within `tol`.
pub fn nearest<T: Copy>(series: &[(f64, T)], t: f64, tol: f64) -> Option<T> {
    let i = series.partition_point(|(ts, _)| *ts < t);
    let candidates = [i.checked_sub(1), Some(i)];
    candidates
        .iter()
        .flatten()
        .filter_map(|&j| series.get(j))
        .map(|(ts, v)| ((ts - t).abs(), *v))
        .filter(|(d, _)| *d <= tol)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, v)| v)
}

/// Closed-open intervals during which `flags` (sorted by time) is true. An
/// interval still open at the end closes at the last sample time.
pub fn intervals(flags: &[(f64, bool)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = None;
    for &(t, on) in flags {
        match (on, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let (Some(s), Some((t, _))) = (start, flags.last()) {
        out.push((s, *t));
    }
    out
}

fn inside(t: f64, spans: &[(f64, f64)]) -> bool {
    spans.iter().any(|(a, b)| t >= *a && t <= *b)
}

/// Signed velocity error along `axis` of every estimate inside the contact
/// intervals, after nearest-neighbor alignment with the truth within `tol`.
pub fn contact_axis_errors(truth: &[(f64, Vec3)], estimate: &[(f64, Vec3)], axis: &Vec3, contact: &[(f64, f64)], tol: f64) -> Vec<f64> {
    let n = axis.normalize();
    estimate.iter().filter(|(t, _)| inside(*t, contact)).filter_map(|(t, v)| nearest(truth, *t, tol).map(|vt| (v - vt).dot(&n))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceStats {
    /// First entry into force holding [s].
    pub hold_start: f64,
    /// [s]
    pub hold_duration: f64,
    /// Share of hold samples inside the force band.
    pub in_band_fraction: f64,
    /// Mean force over the closing window [N].
    pub final_mean: f64,
    /// RMS force error over the hold [N].
    pub rms_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    /// Contact-axis velocity error during detected contact.
    pub velocity: Option<ErrorStats>,
    /// Per-axis `estimate - truth` at every keyframe [m/s].
    pub velocity_error: Vec<(f64, [f64; 3])>,
    pub force: Option<ForceStats>,
    /// Lateral tip-to-target offset converted from pixels [m].
    pub alignment_error: Vec<(f64, [f64; 2])>,
    /// Radius error [px].
    pub scaling_error: Vec<(f64, f64)>,
    /// Phase entries.
    pub phases: Vec<(f64, String)>,
    /// First physical contact [s].
    pub first_contact: Option<f64>,
    /// In-plane distance of the tip from the hole center at first contact [m].
    pub insertion_offset: Option<f64>,
    /// Largest |roll| or |pitch| while force holding [deg].
    pub max_hold_tilt_deg: Option<f64>,
    /// Every estimator solve lowered its cost monotonically.
    pub cost_monotone: bool,
    pub keyframes: usize,
    pub success: bool,
    pub failures: Vec<String>,
}

/// Metrics of one run from its logs. `abort` carries the reason when the
/// run stopped early.
pub fn compute_metrics(logs: &RunLogs, scn: &Scenario, abort: Option<&str>) -> RunMetrics {
    let axis = scn.wall.normal;
    let truth: Vec<(f64, Vec3)> = logs.keyframes.iter().map(|k| (k.t, Vec3::new(k.vx_true, k.vy_true, k.vz_true))).collect();
    let estimate: Vec<(f64, Vec3)> = logs.keyframes.iter().map(|k| (k.t, Vec3::new(k.vx_est, k.vy_est, k.vz_est))).collect();
    let flags: Vec<(f64, bool)> = logs.state.iter().map(|s| (s.t, s.contact_detected)).collect();
    let contact = intervals(&flags);
    let tol = 0.5 / scn.rates.sim as f64;
    let errors = contact_axis_errors(&truth, &estimate, &axis, &contact, tol);
    let velocity = error_stats(&errors);
    let velocity_error = truth
        .iter()
        .zip(&estimate)
        .map(|((t, vt), (_, ve))| {
            let e = ve - vt;
            (*t, [e.x, e.y, e.z])
        })
        .collect();

    let alignment_error = logs
        .servo
        .iter()
        .filter(|s| s.status == "tracking")
        .map(|s| (s.t, [s.e_u * s.depth / scn.camera.fx, s.e_v * s.depth / scn.camera.fy]))
        .collect();
    let scaling_error = logs.servo.iter().filter(|s| s.status == "tracking").map(|s| (s.t, s.e_r)).collect();

    let mut phases: Vec<(f64, String)> = Vec::new();
    for c in &logs.control {
        if phases.last().map(|(_, p)| p != &c.phase).unwrap_or(true) {
            phases.push((c.t, c.phase.clone()));
        }
    }

    let first = logs.state.iter().find(|s| s.contact_true);
    let first_contact = first.map(|s| s.t);
    let insertion_offset = first.map(|s| {
        let q = UnitQuaternion::from_euler(s.roll_deg.to_radians(), s.pitch_deg.to_radians(), s.yaw_deg.to_radians());
        let tip = Vec3::new(s.px, s.py, s.pz) + q.rotate(&scn.vehicle.ee_offset);
        let d = tip - scn.wall.hole_center;
        let n = scn.wall.normal.normalize();
        (d - n * d.dot(&n)).norm()
    });

    let hold_start = logs.control.iter().find(|c| c.phase == "force_hold").map(|c| c.t);
    let end = logs.state.last().map(|s| s.t).unwrap_or(0.0);
    let reference = scn.control.impedance.reference_force;
    let sc = &scn.success;
    let force = hold_start.and_then(|h| {
        let hold: Vec<f64> = logs.force.iter().filter(|f| f.t >= h).map(|f| f.f_measured).collect();
        let closing: Vec<f64> = logs.force.iter().filter(|f| f.t >= end - sc.final_window && f.t >= h).map(|f| f.f_measured).collect();
        if hold.is_empty() || closing.is_empty() {
            return None;
        }
        let in_band = hold.iter().filter(|f| (*f - reference).abs() <= sc.force_band).count();
        Some(ForceStats {
            hold_start: h,
            hold_duration: end - h,
            in_band_fraction: in_band as f64 / hold.len() as f64,
            final_mean: closing.iter().sum::<f64>() / closing.len() as f64,
            rms_error: (hold.iter().map(|f| (f - reference).powi(2)).sum::<f64>() / hold.len() as f64).sqrt(),
        })
    });
    let max_hold_tilt_deg = hold_start.map(|_| {
        logs.state.iter().filter(|s| s.phase == "force_hold").map(|s| s.roll_deg.abs().max(s.pitch_deg.abs())).fold(0.0, f64::max)
    });

    let mut failures = Vec::new();
    if let Some(reason) = abort {
        failures.push(format!("aborted: {reason}"));
    }
    match insertion_offset {
        None => failures.push("no contact".into()),
        Some(o) if o > scn.wall.hole_inner_radius => failures.push(format!("insertion missed by {o:.4} m")),
        _ => {}
    }
    match &force {
        None => failures.push("force holding never started".into()),
        Some(f) => {
            if f.hold_duration < sc.final_window {
                failures.push(format!("hold of {:.2} s is shorter than the closing window", f.hold_duration));
            }
            if f.in_band_fraction < sc.band_fraction {
                failures.push(format!("force in band for {:.1}% of the hold", 100.0 * f.in_band_fraction));
            }
            if (f.final_mean - reference).abs() > sc.final_mean_tolerance {
                failures.push(format!("closing mean force {:.3} N", f.final_mean));
            }
        }
    }

    RunMetrics {
        scenario: scn.name.clone(),
        seed: scn.seed,
        velocity,
        velocity_error,
        force,
        alignment_error,
        scaling_error,
        phases,
        first_contact,
        insertion_offset,
        max_hold_tilt_deg,
        cost_monotone: logs.keyframes.iter().all(|k| k.cost_monotone),
        keyframes: logs.keyframes.len(),
        success: failures.is_empty(),
        failures,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into())
}

impl RunMetrics {
    /// Scalar summary keyed by metric name.
    pub fn summary(&self) -> BTreeMap<&'static str, String> {
        let v = self.velocity;
        let f = self.force;
        BTreeMap::from([
            ("scenario", self.scenario.clone()),
            ("seed", self.seed.to_string()),
            ("success", self.success.to_string()),
            ("failures", self.failures.join("; ")),
            ("velocity_rmse", opt(v.map(|s| s.rmse))),
            ("velocity_mean", opt(v.map(|s| s.mean))),
            ("velocity_max", opt(v.map(|s| s.max))),
            ("velocity_std", opt(v.map(|s| s.std))),
            ("velocity_samples", v.map(|s| s.samples).unwrap_or(0).to_string()),
            ("hold_start", opt(f.map(|s| s.hold_start))),
            ("hold_duration", opt(f.map(|s| s.hold_duration))),
            ("force_in_band_fraction", opt(f.map(|s| s.in_band_fraction))),
            ("force_final_mean", opt(f.map(|s| s.final_mean))),
            ("force_rms_error", opt(f.map(|s| s.rms_error))),
            ("first_contact", opt(self.first_contact)),
            ("insertion_offset", opt(self.insertion_offset)),
            ("max_hold_tilt_deg", opt(self.max_hold_tilt_deg)),
            ("cost_monotone", self.cost_monotone.to_string()),
            ("keyframes", self.keyframes.to_string()),
        ])
    }

    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(METRICS_CSV))?;
        w.write_record(["metric", "value"])?;
        for (k, v) in self.summary() {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        std::fs::write(dir.join(METRICS_TXT), self.render())?;
        Ok(())
    }

    /// Human-readable report, velocities in m/s to four decimals.
    pub fn render(&self) -> String {
        let mut s = format!("scenario {} (seed {})\n", self.scenario, self.seed);
        s += &format!("  success: {}\n", if self.success { "yes" } else { "no" });
        for f in &self.failures {
            s += &format!("    - {f}\n");
        }
        s += "  velocity error during contact (m/s):\n";
        s += &format!("    {:>8} {:>8} {:>8} {:>8}\n", "RMSE", "mean", "max", "std");
        match self.velocity {
            Some(v) => s += &format!("    {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n", v.rmse, v.mean, v.max, v.std),
            None => s += &format!("    {:>8} {:>8} {:>8} {:>8}\n", "n/a", "n/a", "n/a", "n/a"),
        }
        if let Some(f) = self.force {
            s += &format!(
                "  force hold from {:.2} s: {:.1}% in band, closing mean {:.3} N, rms error {:.3} N\n",
                f.hold_start,
                100.0 * f.in_band_fraction,
                f.final_mean,
                f.rms_error
            );
        }
        if let Some(o) = self.insertion_offset {
            s += &format!("  insertion offset {:.4} m\n", o);
        }
        if let Some(t) = self.max_hold_tilt_deg {
            s += &format!("  max tilt while holding {:.2} deg\n", t);
        }
        s += &format!("  solver cost monotone: {}\n", self.cost_monotone);
        s
    }
}
