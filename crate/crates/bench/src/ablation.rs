//! Paired runs that differ in one toggle and share every random stream.

use std::path::Path;

use crate::metrics::ErrorStats;
use crate::runner::{run_scenario, RunResult};
use crate::scenario::{Scenario, VelocitySource};
use crate::BenchError;

pub const COMPARISON_TXT: &str = "comparison.txt";
pub const COMPARISON_CSV: &str = "comparison.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Toggle {
    /// Contact factors on (first run) against off (second run).
    ContactFactor,
    /// Estimator feedback (first run) against ground-truth feedback.
    VelocitySource,
}

impl Toggle {
    /// The two variants of `scn` and their labels.
    pub fn variants(&self, scn: &Scenario) -> [(String, Scenario); 2] {
        let mut a = scn.clone();
        let mut b = scn.clone();
        match self {
            Toggle::ContactFactor => {
                a.estimator.contact_factors = true;
                b.estimator.contact_factors = false;
                [("contact_on".into(), a), ("contact_off".into(), b)]
            }
            Toggle::VelocitySource => {
                a.velocity_source = VelocitySource::Estimator;
                b.velocity_source = VelocitySource::GroundTruth;
                [("estimator".into(), a), ("ground_truth".into(), b)]
            }
        }
    }

    /// Whether the RMSE reduction of the first run over the second is a
    /// meaningful comparison.
    pub fn improvement_applies(&self) -> bool {
        matches!(self, Toggle::ContactFactor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub stats: Option<ErrorStats>,
    pub success: bool,
}

/// Contact-interval velocity error of two runs and the relative RMSE
/// reduction of the first over the second.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub scenario: String,
    pub rows: [ComparisonRow; 2],
    /// Percent; `None` when not applicable.
    pub improvement: Option<f64>,
}

/// `100 (b - a) / b`, `None` if either side is missing or `b` is zero.
pub fn rmse_reduction(a: Option<&ErrorStats>, b: Option<&ErrorStats>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b.rmse > 0.0 => Some(100.0 * (b.rmse - a.rmse) / b.rmse),
        (Some(a), Some(b)) if a.rmse == b.rmse => Some(0.0),
        _ => None,
    }
}

impl Comparison {
    pub fn new(scenario: &str, a: (&str, &RunResult), b: (&str, &RunResult), applicable: bool) -> Self {
        let row = |(label, r): (&str, &RunResult)| ComparisonRow {
            label: label.to_string(),
            stats: r.metrics.velocity,
            success: r.metrics.success,
        };
        let improvement = if applicable { rmse_reduction(a.1.metrics.velocity.as_ref(), b.1.metrics.velocity.as_ref()) } else { None };
        Self { scenario: scenario.to_string(), rows: [row(a), row(b)], improvement }
    }

    /// Fixed-width table, velocities in m/s to four decimals.
    pub fn render(&self) -> String {
        let mut s = format!("Velocity estimation error during contact (m/s), scenario {}\n", self.scenario);
        s += &format!("{:<14} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "run", "RMSE", "mean", "max", "std", "success");
        for r in &self.rows {
            match r.stats {
                Some(v) => {
                    s += &format!("{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8}\n", r.label, v.rmse, v.mean, v.max, v.std, r.success)
                }
                None => s += &format!("{:<14} {:>8} {:>8} {:>8} {:>8} {:>8}\n", r.label, "n/a", "n/a", "n/a", "n/a", r.success),
            }
        }
        match self.improvement {
            Some(p) => s += &format!("RMSE reduction: {p:.2}%\n"),
            None => s += "RMSE reduction: n/a\n",
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(COMPARISON_TXT), self.render())?;
        let mut w = csv::Writer::from_path(dir.join(COMPARISON_CSV))?;
        w.write_record(["run", "rmse", "mean", "max", "std", "samples", "success", "improvement_percent"])?;
        let imp = self.improvement.map(|p| p.to_string()).unwrap_or_else(|| "n/a".into());
        for r in &self.rows {
            let f = |g: fn(&ErrorStats) -> f64| r.stats.as_ref().map(|s| g(s).to_string()).unwrap_or_else(|| "n/a".into());
            w.write_record([
                r.label.clone(),
                f(|s| s.rmse),
                f(|s| s.mean),
                f(|s| s.max),
                f(|s| s.std),
                r.stats.map(|s| s.samples).unwrap_or(0).to_string(),
                r.success.to_string(),
                imp.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub runs: [(String, RunResult); 2],
    pub comparison: Comparison,
}

/// Runs two scenarios in parallel and compares them. Both runs keep their
/// own seeds; the harness never touches the random streams.
pub fn run_pair(
    name: &str,
    a: (String, Scenario),
    b: (String, Scenario),
    applicable: bool,
    out_dir: Option<&Path>,
) -> Result<AblationResult, BenchError> {
    let dir_a = out_dir.map(|d| d.join(&a.0));
    let dir_b = out_dir.map(|d| d.join(&b.0));
    let (ra, rb) = std::thread::scope(|s| {
        let ha = s.spawn(|| run_scenario(&a.1, dir_a.as_deref()));
        let hb = s.spawn(|| run_scenario(&b.1, dir_b.as_deref()));
        (ha.join().expect("run thread panicked"), hb.join().expect("run thread panicked"))
    });
    let (ra, rb) = (ra?, rb?);
    let comparison = Comparison::new(name, (&a.0, &ra), (&b.0, &rb), applicable);
    if let Some(d) = out_dir {
        comparison.write(d)?;
    }
    Ok(AblationResult { runs: [(a.0, ra), (b.0, rb)], comparison })
}

pub fn run_ablation(scn: &Scenario, toggle: Toggle, out_dir: Option<&Path>) -> Result<AblationResult, BenchError> {
    let [a, b] = toggle.variants(scn);
    run_pair(&scn.name, a, b, toggle.improvement_applies(), out_dir)
}
