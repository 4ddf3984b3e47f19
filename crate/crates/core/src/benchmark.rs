//! Randomized reaching benchmark comparing the planner against the tracking
//! baselines.
//!
//! Every run draws its start from one seeded stream, so the rows depend only
//! on the scenario. Wall-clock timings are kept apart from the metrics so the
//! metrics serialize identically across repeated runs.

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{run_tracker, Policy, TrackerOptions, TrackerTrace};
use crate::error::ScenarioError;
use crate::gp::SupportState;
use crate::metrics::{RunMetrics, Samples, Timing};
use crate::model::Configuration;
use crate::scenario::{GoalSpec, PlanOptions, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Planner { interpolated: bool, k: usize },
    Dls,
    NullSpace,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Planner { interpolated: true, k } => format!("planner_interp_k{k}"),
            Method::Planner { interpolated: false, k } => format!("planner_no_interp_k{k}"),
            Method::Dls => "dls".into(),
            Method::NullSpace => "nullspace".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkOptions {
    pub runs: usize,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
}

/// One method on one start.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub method: String,
    pub metrics: RunMetrics,
    /// Largest per-joint speed over all samples, rad/s.
    pub peak_velocity: f64,
    pub error: Option<String>,
}

/// Per-method aggregate over all runs. Manipulability and velocity columns
/// are means of the per-run statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: String,
    pub manip_avg: f64,
    pub manip_min: f64,
    pub manip_max: f64,
    pub velocity_max: f64,
    pub velocity_avg: f64,
    pub peak_velocity: f64,
    pub solved: usize,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: String,
    /// Mean seconds per run.
    pub mean: Timing,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub goal: [f64; 3],
    pub starts: Vec<Vec<f64>>,
    pub rows: Vec<MethodRow>,
    pub records: Vec<RunRecord>,
}

impl BenchmarkReport {
    pub fn row(&self, method: &Method) -> Option<&MethodRow> {
        let label = method.label();
        self.rows.iter().find(|r| r.method == label)
    }

    /// The report with every timing zeroed.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.metrics.time = Timing::default();
        }
        out
    }

    pub fn metrics_json(&self) -> String {
        serde_json::to_string_pretty(&self.without_timings()).expect("report serializes")
    }

    pub fn timings(&self) -> Vec<TimingRow> {
        self.rows
            .iter()
            .map(|row| {
                let recs: Vec<&RunRecord> = self.records.iter().filter(|r| r.method == row.method).collect();
                let n = recs.len().max(1) as f64;
                let mut mean = Timing::default();
                for r in &recs {
                    mean.total += r.metrics.time.total / n;
                    mean.opt += r.metrics.time.opt / n;
                    mean.init += r.metrics.time.init / n;
                }
                TimingRow {
                    method: row.method.clone(),
                    mean,
                }
            })
            .collect()
    }

    pub fn timings_json(&self) -> String {
        serde_json::to_string_pretty(&self.timings()).expect("timings serialize")
    }
}

/// Methods benchmarked for a scenario: the interpolated planner at every K,
/// the support-only planner at the largest K, and both trackers.
pub fn methods(scenario: &Scenario) -> Vec<Method> {
    let ks = &scenario.config.benchmark.k_values;
    let k_max = ks.iter().copied().max().unwrap_or(scenario.config.ik.num_solutions);
    let mut out: Vec<Method> = ks
        .iter()
        .map(|&k| Method::Planner {
            interpolated: true,
            k,
        })
        .collect();
    out.push(Method::Planner {
        interpolated: false,
        k: k_max,
    });
    out.push(Method::Dls);
    out.push(Method::NullSpace);
    out
}

/// Seeded feasible starts, drawn sequentially so they do not depend on the
/// number of workers.
pub fn sample_starts(scenario: &Scenario, runs: usize) -> Result<Vec<Configuration>, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.config.seed);
    let min_m = scenario.config.benchmark.start_min_m;
    (0..runs).map(|_| scenario.random_start(&mut rng, min_m)).collect()
}

pub fn tracker_options(scenario: &Scenario) -> TrackerOptions {
    let b = &scenario.config.benchmark;
    TrackerOptions {
        dt: b.sample_dt,
        gain: b.tracker_gain,
        nullspace_gain: b.nullspace_gain,
        timeout: b.tracker_timeout,
        ..Default::default()
    }
}

/// Joint trajectory of a tracker rollout, with the commanded velocity at
/// each sample and zero velocity at the final one.
pub fn tracker_samples(trace: &TrackerTrace, dt: f64) -> Samples {
    let n = trace.q.first().map_or(0, |q| q.len());
    let states = trace
        .q
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let v = trace.omega.get(i).cloned().unwrap_or_else(|| DVector::zeros(n));
            SupportState::new(q.clone(), v, i as f64 * dt)
        })
        .collect();
    Samples {
        states,
        m: trace.m.clone(),
    }
}

fn peak(samples: &Samples) -> f64 {
    samples.velocity().max
}

fn failed(run: usize, method: &Method, err: ScenarioError) -> RunRecord {
    RunRecord {
        run,
        method: method.label(),
        metrics: RunMetrics::default(),
        peak_velocity: 0.0,
        error: Some(err.to_string()),
    }
}

fn run_method(
    scenario: &Scenario,
    run: usize,
    start: &Configuration,
    x_goal: &Vector3<f64>,
    method: &Method,
) -> Result<RunRecord, ScenarioError> {
    let sample_dt = scenario.config.benchmark.sample_dt;
    match *method {
        Method::Planner { interpolated, k } => {
            let opts = PlanOptions {
                interpolated,
                num_solutions: Some(k),
                ik_seed: Some(scenario.config.ik.seed + run as u64),
                sample_dt,
            };
            let out = scenario.plan_from(start, &opts)?;
            let samples = Samples::from_trajectory(&scenario.model, &out.trajectory, sample_dt)?;
            Ok(RunRecord {
                run,
                method: method.label(),
                metrics: out.metrics,
                peak_velocity: peak(&samples),
                error: None,
            })
        }
        Method::Dls | Method::NullSpace => {
            let policy = if *method == Method::Dls {
                Policy::DampedLeastSquares
            } else {
                Policy::NullSpace
            };
            let trace = run_tracker(&scenario.model, start, x_goal, &tracker_options(scenario), policy)?;
            let samples = tracker_samples(&trace, sample_dt);
            let mut metrics = samples.metrics(trace.solved, trace.steps());
            metrics.time = Timing {
                total: trace.wall_time,
                opt: trace.wall_time,
                init: 0.0,
            };
            Ok(RunRecord {
                run,
                method: method.label(),
                metrics,
                peak_velocity: peak(&samples),
                error: None,
            })
        }
    }
}

fn aggregate(method: &Method, records: &[RunRecord]) -> MethodRow {
    let label = method.label();
    let recs: Vec<&RunRecord> = records.iter().filter(|r| r.method == label).collect();
    let n = recs.len().max(1) as f64;
    let mean = |f: &dyn Fn(&RunRecord) -> f64| recs.iter().map(|r| f(r)).sum::<f64>() / n;
    MethodRow {
        manip_avg: mean(&|r| r.metrics.manip.avg),
        manip_min: mean(&|r| r.metrics.manip.min),
        manip_max: mean(&|r| r.metrics.manip.max),
        velocity_max: mean(&|r| r.metrics.velocity.max),
        velocity_avg: mean(&|r| r.metrics.velocity.avg),
        peak_velocity: recs.iter().map(|r| r.peak_velocity).fold(0.0, f64::max),
        solved: recs.iter().filter(|r| r.metrics.solved).count(),
        runs: recs.len(),
        method: label,
    }
}

/// Runs every method on `opts.runs` seeded starts. The scenario goal must be
/// a position.
pub fn run_benchmark(scenario: &Scenario, opts: &BenchmarkOptions) -> Result<BenchmarkReport, ScenarioError> {
    if opts.runs < 1 {
        return Err(ScenarioError::Invalid("benchmark needs at least one run".into()));
    }
    let GoalSpec::Position(goal) = scenario.config.goal else {
        return Err(ScenarioError::Invalid("benchmark needs a position goal".into()));
    };
    let x_goal = Vector3::from(goal);
    let starts = sample_starts(scenario, opts.runs)?;
    let methods = methods(scenario);

    let work = |(run, start): (usize, &Configuration)| -> Vec<RunRecord> {
        methods
            .iter()
            .map(|m| {
                let rec = run_method(scenario, run, start, &x_goal, m).unwrap_or_else(|e| failed(run, m, e));
                log::info!(
                    "run {run} {}: avg m {:.4}, solved {}",
                    rec.method,
                    rec.metrics.manip.avg,
                    rec.metrics.solved
                );
                rec
            })
            .collect()
    };
    let per_run: Vec<Vec<RunRecord>> = if opts.jobs == 0 {
        starts.par_iter().enumerate().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| ScenarioError::Invalid(format!("thread pool: {e}")))?;
        pool.install(|| starts.par_iter().enumerate().map(work).collect())
    };
    let records: Vec<RunRecord> = per_run.into_iter().flatten().collect();
    let rows = methods.iter().map(|m| aggregate(m, &records)).collect();
    Ok(BenchmarkReport {
        seed: scenario.config.seed,
        goal,
        starts: starts.iter().map(|q| q.iter().copied().collect()).collect(),
        rows,
        records,
    })
}
