use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use manipgp::benchmark::{run_benchmark, BenchmarkOptions};
use manipgp::gradcheck::gradcheck;
use manipgp::metrics::Samples;
use manipgp::scenario::{PlanOptions, Scenario};
use manipgp::{ChainModel, ModelError, ScenarioError, SolveError};
use serde_json::json;

#[derive(Parser)]
#[command(name = "manipgp", version, about = "Manipulability-aware GP trajectory planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one trajectory and write CSV, metrics and solver report.
    Plan {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Output sampling rate, Hz.
        #[arg(long, default_value_t = 50.0)]
        sample_hz: f64,
    },
    /// Compare planner and tracking baselines over seeded random starts.
    Benchmark {
        scenario: PathBuf,
        /// Defaults to the scenario's run count.
        #[arg(long)]
        runs: Option<usize>,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check analytic derivatives against finite differences.
    Gradcheck {
        robot: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit status and machine-readable error.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "usage",
            message: message.into(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let (code, kind) = match &e {
            ScenarioError::Io { .. } => (2, "io"),
            ScenarioError::Json(_) => (2, "parse"),
            ScenarioError::Invalid(_) => (2, "config"),
            ScenarioError::Model(_) => (2, "model"),
            ScenarioError::Unreachable(_) => (2, "unreachable"),
            ScenarioError::Solve(SolveError::Diverged { .. }) => (1, "diverged"),
            ScenarioError::Solve(_) => (1, "solve"),
            ScenarioError::Trajectory(_) | ScenarioError::Kinematics(_) => (1, "numerical"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Self {
            code: 2,
            kind: "model",
            message: e.to_string(),
        }
    }
}

fn write(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure {
        code: 2,
        kind: "io",
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure {
        code: 2,
        kind: "io",
        message: format!("cannot create {}: {e}", dir.display()),
    })
}

fn pretty(value: &serde_json::Value) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    text.into_bytes()
}

fn plan(scenario: &Path, out: &Path, sample_hz: f64) -> Result<u8, Failure> {
    if !(sample_hz > 0.0) {
        return Err(Failure::usage(format!("--sample-hz must be positive, got {sample_hz}")));
    }
    let scenario = Scenario::from_path(scenario)?;
    let opts = PlanOptions {
        sample_dt: 1.0 / sample_hz,
        ..Default::default()
    };
    let outcome = scenario.plan(&opts)?;
    create_dir(out)?;

    let samples = Samples::from_trajectory(&scenario.model, &outcome.trajectory, opts.sample_dt)
        .map_err(|e| Failure::from(ScenarioError::from(e)))?;
    let mut csv = Vec::new();
    samples.write_csv(&mut csv).map_err(|e| Failure {
        code: 2,
        kind: "io",
        message: e.to_string(),
    })?;
    write(&out.join("trajectory.csv"), &csv)?;

    let metrics = json!({
        "trajectory": outcome.metrics,
        "initialization": outcome.init_metrics,
        "goal_reached": outcome.goal_reached,
        "selected_candidate": outcome.prepared.selected,
        "candidates": outcome.prepared.candidates,
    });
    write(&out.join("metrics.json"), &pretty(&metrics))?;
    let report = json!({
        "solver": outcome.report,
        "initial_costs": outcome.initial_costs,
        "final_costs": outcome.final_costs,
    });
    write(&out.join("solve_report.json"), &pretty(&report))?;

    let m = &outcome.metrics;
    println!(
        "manipulability avg {:.4} (init {:.4}), min {:.4}, max {:.4}; max joint speed {:.4} rad/s",
        m.manip.avg, outcome.init_metrics.manip.avg, m.manip.min, m.manip.max, m.velocity.max
    );
    println!(
        "{} iterations, {:?}, cost {:.6e} -> {:.6e}, {:.3} s",
        outcome.report.iterations,
        outcome.report.termination,
        outcome.report.initial_cost,
        outcome.report.final_cost,
        m.time.total
    );
    if m.solved {
        Ok(0)
    } else {
        log::warn!("not solved: converged {}, goal reached {}", outcome.report.converged, outcome.goal_reached);
        Ok(1)
    }
}

fn benchmark(scenario: &Path, runs: Option<usize>, jobs: usize, out: &Path) -> Result<u8, Failure> {
    let scenario = Scenario::from_path(scenario)?;
    let runs = runs.unwrap_or(scenario.config.benchmark.runs);
    if runs < 1 {
        return Err(Failure::usage("--runs must be at least 1"));
    }
    let report = run_benchmark(&scenario, &BenchmarkOptions { runs, jobs })?;
    create_dir(out)?;
    let mut metrics = report.metrics_json();
    metrics.push('\n');
    write(&out.join("metrics.json"), metrics.as_bytes())?;
    let mut timings = report.timings_json();
    timings.push('\n');
    write(&out.join("timings.json"), timings.as_bytes())?;

    let timings = report.timings();
    println!(
        "{:<22} {:>8} {:>8} {:>8} {:>10} {:>10} {:>8} {:>8} {:>8} {:>7}",
        "method", "avg m", "min m", "max m", "max vel", "avg vel", "total", "opt", "init", "solved"
    );
    for (row, t) in report.rows.iter().zip(&timings) {
        println!(
            "{:<22} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>10.4} {:>8.4} {:>8.4} {:>8.4} {:>4}/{}",
            row.method,
            row.manip_avg,
            row.manip_min,
            row.manip_max,
            row.velocity_max,
            row.velocity_avg,
            t.mean.total,
            t.mean.opt,
            t.mean.init,
            row.solved,
            row.runs
        );
    }
    Ok(0)
}

fn gradcheck_cmd(robot: &Path, samples: usize, seed: u64) -> Result<u8, Failure> {
    if samples < 1 {
        return Err(Failure::usage("--samples must be at least 1"));
    }
    let model = ChainModel::from_path(robot)?;
    let report = gradcheck(&model, samples, seed).map_err(|e| Failure::from(ScenarioError::from(e)))?;
    print!("{}", String::from_utf8(pretty(&json!(report))).expect("utf-8"));
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!(
            "{}: max relative error {:.3e} at {:?}",
            c.name, c.max_rel_error, c.worst
        );
    }
    Ok(if report.passed { 0 } else { 1 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MANIP_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Plan {
            scenario,
            out,
            sample_hz,
        } => plan(scenario, out, *sample_hz),
        Command::Benchmark {
            scenario,
            runs,
            jobs,
            out,
        } => benchmark(scenario, *runs, *jobs, out),
        Command::Gradcheck { robot, samples, seed } => gradcheck_cmd(robot, *samples, *seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{}", json!({"error": f.kind, "message": f.message}));
            ExitCode::from(f.code)
        }
    }
}
