//! Closed-loop testbench: scenario files, the deterministic runner, metrics,
//! paired ablation runs and plot data export.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod logs;
pub mod metrics;
pub mod plots;
pub mod runner;
pub mod scenario;

pub use ablation::{run_ablation, AblationResult, Comparison, Toggle};
pub use logs::RunLogs;
pub use metrics::{compute_metrics, ErrorStats, ForceStats, RunMetrics};
pub use runner::{run_scenario, Abort, RunResult};
pub use scenario::{Scenario, VelocitySource};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl BenchError {
    /// Process exit code: 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            _ => 1,
        }
    }
}
