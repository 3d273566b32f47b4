use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aeromanip_bench::logs::{RunLogs, ABORT_FILE, SCENARIO_FILE};
use aeromanip_bench::plots::emit_plots;
use aeromanip_bench::{compute_metrics, run_ablation, run_scenario, BenchError, Scenario, Toggle};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aeromanip", version, about = "Closed-loop aerial manipulation testbench")]
struct Cli {
    /// Replace the scenario seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Output directory; defaults depend on the subcommand.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file (or checked-in preset name) and write its logs.
    Run { scenario: String },
    /// Run a paired ablation and write the comparison table.
    Ablate {
        scenario: String,
        #[arg(long, value_enum, default_value = "contact-factor")]
        toggle: ToggleArg,
    },
    /// Recompute the metrics of a log directory.
    Metrics { log_dir: PathBuf },
    /// Export plot-ready CSVs from a log directory.
    Plots {
        log_dir: PathBuf,
        /// Log directory of a baseline run for the velocity panel.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ToggleArg {
    ContactFactor,
    VelocitySource,
}

fn load_scenario(arg: &str, seed: Option<u64>) -> Result<Scenario, BenchError> {
    let path = Path::new(arg);
    let mut scn = if path.exists() { Scenario::load(path)? } else { Scenario::preset(arg)? };
    if let Some(s) = seed {
        scn.seed = s;
    }
    Ok(scn)
}

fn execute(cli: Cli) -> Result<i32, BenchError> {
    let say = |s: &str| {
        if !cli.quiet {
            print!("{s}");
        }
    };
    match &cli.command {
        Command::Run { scenario } => {
            let scn = load_scenario(scenario, cli.seed_override)?;
            let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&scn.name));
            let result = run_scenario(&scn, Some(&dir))?;
            say(&result.metrics.render());
            say(&format!("logs written to {}\n", dir.display()));
            Ok(result.exit_code())
        }
        Command::Ablate { scenario, toggle } => {
            let scn = load_scenario(scenario, cli.seed_override)?;
            let toggle = match toggle {
                ToggleArg::ContactFactor => Toggle::ContactFactor,
                ToggleArg::VelocitySource => Toggle::VelocitySource,
            };
            let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_ablation", scn.name)));
            let result = run_ablation(&scn, toggle, Some(&dir))?;
            say(&result.comparison.render());
            say(&format!("logs written to {}\n", dir.display()));
            let code = result.runs.iter().map(|(_, r)| r.exit_code()).max().unwrap_or(0);
            Ok(code)
        }
        Command::Metrics { log_dir } => {
            let scn = Scenario::load(&log_dir.join(SCENARIO_FILE))?;
            let logs = RunLogs::read(log_dir)?;
            let abort = std::fs::read_to_string(log_dir.join(ABORT_FILE)).ok();
            let metrics = compute_metrics(&logs, &scn, abort.as_deref());
            let dir = cli.out_dir.clone().unwrap_or_else(|| log_dir.clone());
            metrics.write(&dir)?;
            say(&metrics.render());
            Ok(if metrics.success { 0 } else { 1 })
        }
        Command::Plots { log_dir, baseline } => {
            let dir = cli.out_dir.clone().unwrap_or_else(|| log_dir.join("plots"));
            let report = emit_plots(log_dir, baseline.as_deref(), &dir)?;
            for p in &report.written {
                say(&format!("wrote {}\n", p.display()));
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
