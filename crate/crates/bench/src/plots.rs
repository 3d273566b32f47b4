//! Plot-ready CSV export. One tidy CSV per panel; nothing is rendered.
//!
//! | file            | columns |
//! |-----------------|---------|
//! | `force.csv`     | `t, F_measured, F_reference` [s, N, N] |
//! | `velocity.csv`  | `t, truth_{x,y,z}, estimate_{x,y,z}, baseline_{x,y,z}` [s, m/s]; baseline empty without a baseline run |
//! | `alignment.csv` | `t, e_x, e_y` lateral tip offset in the camera frame [s, m] |
//! | `scaling.csv`   | `t, e_r` radius error [s, px] |
//! | `attitude.csv`  | `t, roll, pitch, yaw, phase` [s, deg] |
//!
//! A panel whose source stream is missing or empty is skipped with a warning.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::logs::{read_rows, ForceRow, KeyframeRow, ServoRow, StateRow, FORCE_LOG, KEYFRAME_LOG, SCENARIO_FILE, SERVO_LOG, STATE_LOG};
use crate::metrics::nearest;
use crate::scenario::Scenario;
use crate::BenchError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotReport {
    pub written: Vec<PathBuf>,
    /// Panel name and reason.
    pub skipped: Vec<(String, String)>,
}

fn load<T: DeserializeOwned>(dir: &Path, file: &str) -> Result<Vec<T>, String> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(format!("{} not found", path.display()));
    }
    match read_rows::<T>(&path) {
        Ok(rows) if rows.is_empty() => Err(format!("{} is empty", path.display())),
        Ok(rows) => Ok(rows),
        Err(e) => Err(format!("{}: {e}", path.display())),
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

fn write_panel(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the panel CSVs for the run in `log_dir` into `out_dir`. A second
/// run's `baseline` log directory fills the velocity baseline columns.
pub fn emit_plots(log_dir: &Path, baseline: Option<&Path>, out_dir: &Path) -> Result<PlotReport, BenchError> {
    std::fs::create_dir_all(out_dir)?;
    let mut report = PlotReport::default();
    let skip = |report: &mut PlotReport, panel: &str, why: String| {
        eprintln!("warning: skipping {panel} panel: {why}");
        report.skipped.push((panel.to_string(), why));
    };

    match load::<ForceRow>(log_dir, FORCE_LOG) {
        Ok(rows) => {
            let p = out_dir.join("force.csv");
            write_panel(
                &p,
                &["t", "F_measured", "F_reference"],
                rows.iter().map(|r| vec![num(r.t), num(r.f_measured), num(r.f_reference)]),
            )?;
            report.written.push(p);
        }
        Err(why) => skip(&mut report, "force", why),
    }

    match load::<KeyframeRow>(log_dir, KEYFRAME_LOG) {
        Ok(rows) => {
            let base: Vec<(f64, [f64; 3])> = match baseline.map(|b| load::<KeyframeRow>(b, KEYFRAME_LOG)) {
                Some(Ok(b)) => b.iter().map(|k| (k.t, [k.vx_est, k.vy_est, k.vz_est])).collect(),
                Some(Err(why)) => {
                    eprintln!("warning: baseline velocity unavailable: {why}");
                    Vec::new()
                }
                None => Vec::new(),
            };
            let tol = match load_scenario(log_dir) {
                Some(s) => 0.5 / s.rates.sim as f64,
                None => 1e-9,
            };
            let p = out_dir.join("velocity.csv");
            write_panel(
                &p,
                &["t", "truth_x", "truth_y", "truth_z", "estimate_x", "estimate_y", "estimate_z", "baseline_x", "baseline_y", "baseline_z"],
                rows.iter().map(|k| {
                    let b = nearest(&base, k.t, tol);
                    let mut r = vec![num(k.t), num(k.vx_true), num(k.vy_true), num(k.vz_true), num(k.vx_est), num(k.vy_est), num(k.vz_est)];
                    r.extend((0..3).map(|i| b.map(|v| num(v[i])).unwrap_or_default()));
                    r
                }),
            )?;
            report.written.push(p);
        }
        Err(why) => skip(&mut report, "velocity", why),
    }

    match (load::<ServoRow>(log_dir, SERVO_LOG), load_scenario(log_dir)) {
        (Ok(rows), scn) => {
            let tracking: Vec<&ServoRow> = rows.iter().filter(|s| s.status == "tracking").collect();
            match scn {
                Some(scn) => {
                    let p = out_dir.join("alignment.csv");
                    write_panel(
                        &p,
                        &["t", "e_x", "e_y"],
                        tracking.iter().map(|s| vec![num(s.t), num(s.e_u * s.depth / scn.camera.fx), num(s.e_v * s.depth / scn.camera.fy)]),
                    )?;
                    report.written.push(p);
                }
                None => skip(&mut report, "alignment", format!("{SCENARIO_FILE} not found or invalid")),
            }
            let p = out_dir.join("scaling.csv");
            write_panel(&p, &["t", "e_r"], tracking.iter().map(|s| vec![num(s.t), num(s.e_r)]))?;
            report.written.push(p);
        }
        (Err(why), _) => {
            skip(&mut report, "alignment", why.clone());
            skip(&mut report, "scaling", why);
        }
    }

    match load::<StateRow>(log_dir, STATE_LOG) {
        Ok(rows) => {
            let p = out_dir.join("attitude.csv");
            write_panel(
                &p,
                &["t", "roll", "pitch", "yaw", "phase"],
                rows.iter().map(|s| vec![num(s.t), num(s.roll_deg), num(s.pitch_deg), num(s.yaw_deg), s.phase.clone()]),
            )?;
            report.written.push(p);
        }
        Err(why) => skip(&mut report, "attitude", why),
    }

    Ok(report)
}

fn load_scenario(dir: &Path) -> Option<Scenario> {
    Scenario::load(&dir.join(SCENARIO_FILE)).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logs::write_rows;

    #[test]
    fn force_panel_schema_and_missing_streams() {
        let dir = tempfile::tempdir().unwrap();
        let logs = dir.path().join("logs");
        std::fs::create_dir_all(&logs).unwrap();
        write_rows(&logs.join(FORCE_LOG), &[ForceRow { t: 0.0, f_measured: 4.5, f_reference: 5.0 }]).unwrap();
        let out = dir.path().join("plots");
        let report = emit_plots(&logs, None, &out).unwrap();
        assert_eq!(report.written, vec![out.join("force.csv")]);
        let skipped: Vec<&str> = report.skipped.iter().map(|(p, _)| p.as_str()).collect();
        assert_eq!(skipped, ["velocity", "alignment", "scaling", "attitude"]);
        let text = std::fs::read_to_string(out.join("force.csv")).unwrap();
        assert_eq!(text, "t,F_measured,F_reference\n0,4.5,5\n");
    }
}
