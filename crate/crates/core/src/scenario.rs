//! Declarative planning problems: parsing, validation, factor-graph assembly
//! and the plan pipeline.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::factors::{collision_cost, CollisionFactorParams, ManipFactorParams};
use crate::gp::{GpParams, GpTrajectory};
use crate::initialization::{best_initialization, CandidateScore, IkOptions};
use crate::metrics::{RunMetrics, Samples, Timing, DEFAULT_SAMPLE_DT};
use crate::model::{ChainModel, Configuration};
use crate::solver::{solve, CostBreakdown, FactorGraph, SolveReport, SolverOptions};
use crate::workspace::{Aabb, Obstacle, SdfGrid, DEFAULT_CELL_SIZE};

/// Uniform samples used to estimate `m_max` when the model does not set it.
pub const M_MAX_SAMPLES: usize = 20_000;

/// A configuration goal counts as reached within this many radians per joint.
pub const GOAL_CONFIG_TOL: f64 = 0.05;

/// A position goal counts as reached within this distance, meters.
pub const GOAL_POSITION_TOL: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Robot model file, relative to the scenario file.
    pub robot: PathBuf,
    pub start: StartSpec,
    pub goal: GoalSpec,
    pub gp: GpConfig,
    #[serde(default)]
    pub factors: FactorConfig,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub sdf: Option<SdfConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub ik: IkConfig,
    #[serde(default)]
    pub init: Option<InitConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartKeyword {
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartSpec {
    Configuration(Vec<f64>),
    Keyword(StartKeyword),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum GoalSpec {
    Configuration(Vec<f64>),
    Position([f64; 3]),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    #[serde(rename = "Qc_scale")]
    pub qc_scale: f64,
    #[serde(rename = "T")]
    pub total_time: f64,
    pub num_support: usize,
}

/// How start and goal anchors enter the problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorMode {
    /// Anchor states are held at their prior means; the priors stay in the
    /// objective with zero residual.
    #[default]
    Fixed,
    /// Anchors are ordinary Gaussian state priors.
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedState {
    pub index: usize,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorConfig {
    pub sigma_s: f64,
    /// Defaults to one percent of `m_max`.
    pub c: Option<f64>,
    pub sigma_obs: f64,
    pub eps: f64,
    pub sigma_theta_anchor: f64,
    pub anchors: AnchorMode,
    pub fixed_states: Vec<FixedState>,
    /// Weight of the end-effector position factor for position goals.
    pub sigma_goal: f64,
    /// Manipulability factors at interpolated times.
    pub interpolated: bool,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            sigma_s: 1e-4,
            c: None,
            sigma_obs: 1e2,
            eps: 0.3,
            sigma_theta_anchor: 1e-3,
            anchors: AnchorMode::Fixed,
            fixed_states: Vec::new(),
            sigma_goal: 1e-4,
            interpolated: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdfConfig {
    pub cell_size: f64,
    /// Defaults to the obstacle bounds grown by the safety margin.
    pub bounds: Option<Aabb>,
}

impl Default for SdfConfig {
    fn default() -> Self {
        Self {
            cell_size: DEFAULT_CELL_SIZE,
            bounds: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol_rel: f64,
    pub lm_damping_init: f64,
    pub interp_per_interval: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            max_iters: d.max_iters,
            tol_rel: d.tol_rel,
            lm_damping_init: d.lm_damping_init,
            interp_per_interval: 9,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.max_iters,
            tol_rel: self.tol_rel,
            lm_damping_init: self.lm_damping_init,
            ..SolverOptions::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkConfig {
    pub num_solutions: usize,
    pub seed: u64,
    pub pos_tol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        let d = IkOptions::default();
        Self {
            num_solutions: d.num_solutions,
            seed: d.seed,
            pos_tol: d.pos_tol,
            max_iters: d.max_iters,
            damping: d.damping,
        }
    }
}

impl IkConfig {
    pub fn options(&self) -> IkOptions {
        IkOptions {
            num_solutions: self.num_solutions,
            max_iters: self.max_iters,
            pos_tol: self.pos_tol,
            damping: self.damping,
            seed: self.seed,
            ..IkOptions::default()
        }
    }
}

/// Initialization through intermediate configurations instead of a straight
/// line. Only for configuration goals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub waypoints: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub runs: usize,
    /// IK candidate counts compared by the planner rows.
    pub k_values: Vec<usize>,
    /// Random starts need at least this manipulability.
    pub start_min_m: f64,
    pub sample_dt: f64,
    pub tracker_gain: f64,
    pub nullspace_gain: f64,
    /// Seconds of simulated time.
    pub tracker_timeout: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            runs: 50,
            k_values: vec![1, 5, 10, 20],
            start_min_m: 1e-4,
            sample_dt: DEFAULT_SAMPLE_DT,
            tracker_gain: 1.0,
            nullspace_gain: 1.0,
            tracker_timeout: 30.0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    fn validate(&self, model: &ChainModel) -> Result<(), ScenarioError> {
        let n = model.dof();
        let invalid = |msg: String| Err(ScenarioError::Invalid(msg));
        if let StartSpec::Configuration(q) = &self.start {
            if q.len() != n {
                return invalid(format!("start has {} joints, robot has {n}", q.len()));
            }
        }
        match &self.goal {
            GoalSpec::Configuration(q) if q.len() != n => {
                return invalid(format!("goal configuration has {} joints, robot has {n}", q.len()));
            }
            GoalSpec::Position(_) if self.init.is_some() => {
                return invalid("waypoint initialization needs a configuration goal".into());
            }
            _ => {}
        }
        if !(self.gp.qc_scale > 0.0) || !(self.gp.total_time > 0.0) || self.gp.num_support < 2 {
            return invalid("gp needs Qc_scale > 0, T > 0 and num_support >= 2".into());
        }
        let f = &self.factors;
        for (name, v) in [
            ("sigma_s", f.sigma_s),
            ("sigma_obs", f.sigma_obs),
            ("sigma_theta_anchor", f.sigma_theta_anchor),
            ("sigma_goal", f.sigma_goal),
        ] {
            if !(v > 0.0) {
                return invalid(format!("factors.{name} must be positive, got {v}"));
            }
        }
        if f.c.is_some_and(|c| !(c > 0.0)) {
            return invalid("factors.c must be positive".into());
        }
        if !(f.eps >= 0.0) {
            return invalid("factors.eps must be nonnegative".into());
        }
        for fs in &f.fixed_states {
            if fs.index >= self.gp.num_support || !(fs.sigma > 0.0) {
                return invalid(format!("fixed state {} (sigma {}) is invalid", fs.index, fs.sigma));
            }
        }
        if let Some(init) = &self.init {
            if init.waypoints.iter().any(|w| w.len() != n) {
                return invalid(format!("waypoints must have {n} joints"));
            }
        }
        if !(self.solver.tol_rel >= 0.0) || !(self.solver.lm_damping_init >= 0.0) {
            return invalid("solver tolerances must be nonnegative".into());
        }
        self.ik.options().validate().map_err(ScenarioError::Invalid)?;
        if self.sdf.is_some_and(|s| !(s.cell_size > 0.0)) {
            return invalid("sdf.cell_size must be positive".into());
        }
        if !self.obstacles.is_empty() && model.spheres().is_empty() {
            return invalid("obstacles given but the robot has no collision spheres".into());
        }
        if self.benchmark.k_values.contains(&0) || !(self.benchmark.sample_dt > 0.0) {
            return invalid("benchmark k_values must be >= 1 and sample_dt > 0".into());
        }
        Ok(())
    }
}

/// A validated scenario with its robot model and distance field loaded.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
    pub model: ChainModel,
    pub sdf: Option<SdfGrid>,
}

/// Initial trajectory, the straight-line prior and the resolved goal.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub start: Configuration,
    pub init: GpTrajectory,
    pub prior: GpTrajectory,
    pub goal_config: Configuration,
    pub goal_position: Option<Vector3<f64>>,
    pub candidates: Vec<CandidateScore>,
    pub selected: Option<usize>,
    /// Seconds.
    pub init_time: f64,
}

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub prepared: Prepared,
    pub trajectory: GpTrajectory,
    pub report: SolveReport,
    pub initial_costs: CostBreakdown,
    pub final_costs: CostBreakdown,
    pub metrics: RunMetrics,
    pub init_metrics: RunMetrics,
    pub goal_reached: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanOptions {
    pub interpolated: bool,
    /// Overrides `ik.num_solutions`.
    pub num_solutions: Option<usize>,
    /// Overrides `ik.seed`.
    pub ik_seed: Option<u64>,
    pub sample_dt: f64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            interpolated: true,
            num_solutions: None,
            ik_seed: None,
            sample_dt: DEFAULT_SAMPLE_DT,
        }
    }
}

fn default_sdf_bounds(obstacles: &[Obstacle], margin: f64) -> Aabb {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for o in obstacles {
        let b = o.aabb();
        for a in 0..3 {
            min[a] = min[a].min(b.min[a] - margin);
            max[a] = max[a].max(b.max[a] + margin);
        }
    }
    Aabb { min, max }
}

impl Scenario {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config = ScenarioConfig::from_json_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_config(config, base)
    }

    pub fn from_config(config: ScenarioConfig, base_dir: impl Into<PathBuf>) -> Result<Self, ScenarioError> {
        let base_dir = base_dir.into();
        let robot_path = base_dir.join(&config.robot);
        if !robot_path.is_file() {
            return Err(ScenarioError::Invalid(format!(
                "robot file {} does not exist",
                robot_path.display()
            )));
        }
        let model = ChainModel::from_path(&robot_path)?.ensure_m_max(M_MAX_SAMPLES, config.seed);
        config.validate(&model)?;
        let sdf = if config.obstacles.is_empty() {
            None
        } else {
            let sdf_cfg = config.sdf.unwrap_or_default();
            let radius = model.spheres().iter().map(|s| s.radius).fold(0.0, f64::max);
            let margin = config.factors.eps + radius + 2.0 * sdf_cfg.cell_size;
            let bounds = sdf_cfg
                .bounds
                .unwrap_or_else(|| default_sdf_bounds(&config.obstacles, margin));
            Some(SdfGrid::build(&config.obstacles, bounds, sdf_cfg.cell_size).map_err(ScenarioError::Invalid)?)
        };
        Ok(Self {
            config,
            base_dir,
            model,
            sdf,
        })
    }

    pub fn gp_params(&self) -> GpParams {
        let g = &self.config.gp;
        GpParams::isotropic(self.model.dof(), g.qc_scale, g.total_time, g.num_support)
            .expect("validated gp parameters")
    }

    pub fn manip_params(&self) -> ManipFactorParams {
        let m_max = self.model.m_max().expect("m_max set on load");
        let f = &self.config.factors;
        match f.c {
            Some(c) => ManipFactorParams::new(f.sigma_s, c, m_max),
            None => ManipFactorParams::with_default_c(f.sigma_s, m_max),
        }
        .expect("validated factor parameters")
    }

    pub fn collision_params(&self) -> CollisionFactorParams {
        CollisionFactorParams::new(self.config.factors.sigma_obs, self.config.factors.eps)
            .expect("validated factor parameters")
    }

    /// Whether `q` keeps every collision sphere clear of the obstacles by the
    /// safety margin.
    pub fn is_collision_free(&self, q: &Configuration) -> Result<bool, ScenarioError> {
        match &self.sdf {
            None => Ok(true),
            Some(sdf) => Ok(collision_cost(&self.model, sdf, q, self.config.factors.eps)?.is_free()),
        }
    }

    /// Uniform in-limit configuration with manipulability above `min_m` and
    /// no collision, by rejection sampling.
    pub fn random_start<R: Rng>(&self, rng: &mut R, min_m: f64) -> Result<Configuration, ScenarioError> {
        for _ in 0..100_000 {
            let q = self.model.sample_configuration(rng);
            if self.model.manipulability(&q)?.m > min_m && self.is_collision_free(&q)? {
                return Ok(q);
            }
        }
        Err(ScenarioError::Invalid("no feasible random start found".into()))
    }

    pub fn start_configuration(&self) -> Result<Configuration, ScenarioError> {
        match &self.config.start {
            StartSpec::Configuration(q) => Ok(DVector::from_column_slice(q)),
            StartSpec::Keyword(StartKeyword::Random) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                self.random_start(&mut rng, self.config.benchmark.start_min_m)
            }
        }
    }

    /// Builds the initialization: straight line, waypoint path, or the best
    /// of the IK candidates for a position goal.
    pub fn prepare(&self, start: &Configuration, opts: &PlanOptions) -> Result<Prepared, ScenarioError> {
        let clock = Instant::now();
        let params = self.gp_params();
        let per_interval = self.config.solver.interp_per_interval;
        let (init, goal_config, goal_position, candidates, selected) = match &self.config.goal {
            GoalSpec::Configuration(g) => {
                let goal = DVector::from_column_slice(g);
                let init = match &self.config.init {
                    Some(wp) => {
                        let mut points = vec![start.clone()];
                        points.extend(wp.waypoints.iter().map(|w| DVector::from_column_slice(w)));
                        points.push(goal.clone());
                        GpTrajectory::through_waypoints(&points, params.clone())?
                    }
                    None => GpTrajectory::constant_velocity(start, &goal, params.clone())?,
                };
                (init, goal, None, Vec::new(), None)
            }
            GoalSpec::Position(x) => {
                let x_goal = Vector3::from(*x);
                let mut ik = self.config.ik.options();
                if let Some(k) = opts.num_solutions {
                    ik.num_solutions = k;
                }
                if let Some(seed) = opts.ik_seed {
                    ik.seed = seed;
                }
                let best = best_initialization(&self.model, start, &x_goal, &params, &ik, per_interval)?;
                (best.trajectory, best.goal, Some(x_goal), best.candidates, Some(best.selected))
            }
        };
        let prior = GpTrajectory::constant_velocity(start, &goal_config, params)?;
        Ok(Prepared {
            start: start.clone(),
            init,
            prior,
            goal_config,
            goal_position,
            candidates,
            selected,
            init_time: clock.elapsed().as_secs_f64(),
        })
    }

    /// Factor graph: GP prior chain, start/goal anchors, intermediate state
    /// priors, manipulability factors, collision factors when obstacles are
    /// present, and an end-effector factor for position goals.
    pub fn assemble(&self, prepared: &Prepared, interpolated: bool) -> Result<FactorGraph<'_>, ScenarioError> {
        let f = &self.config.factors;
        let per_interval = self.config.solver.interp_per_interval;
        let mut graph = FactorGraph::new(&self.model, self.gp_params())?;
        let last = self.config.gp.num_support - 1;
        for index in [0, last] {
            let mean = prepared.prior.states()[index].clone();
            if f.anchors == AnchorMode::Fixed {
                graph.fix_state(index, &mean)?;
            }
            graph.add_state_prior(index, mean, f.sigma_theta_anchor)?;
        }
        for fs in &f.fixed_states {
            graph.add_state_prior(fs.index, prepared.init.states()[fs.index].clone(), fs.sigma)?;
        }
        graph.add_manipulability(self.manip_params(), if interpolated { per_interval } else { 0 })?;
        if let Some(sdf) = &self.sdf {
            graph.add_collision(sdf, self.collision_params(), per_interval)?;
        }
        if let Some(x) = prepared.goal_position {
            graph.add_goal_position(last, x, f.sigma_goal)?;
        }
        Ok(graph)
    }

    pub fn goal_reached(&self, prepared: &Prepared, traj: &GpTrajectory) -> Result<bool, ScenarioError> {
        let end = &traj.states().last().expect("at least two states").theta;
        Ok(match prepared.goal_position {
            Some(x) => (self.model.ee_position(end)? - x).norm() <= GOAL_POSITION_TOL,
            None => (end - &prepared.goal_config).amax() <= GOAL_CONFIG_TOL,
        })
    }

    pub fn plan_from(&self, start: &Configuration, opts: &PlanOptions) -> Result<PlanOutcome, ScenarioError> {
        let prepared = self.prepare(start, opts)?;
        let graph = self.assemble(&prepared, opts.interpolated)?;
        let initial_costs = graph.breakdown(&prepared.init.stacked())?;
        let (trajectory, report) = solve(&graph, &prepared.init, &self.config.solver.options())?;
        let final_costs = graph.breakdown(&trajectory.stacked())?;
        let goal_reached = self.goal_reached(&prepared, &trajectory)?;

        let samples = Samples::from_trajectory(&self.model, &trajectory, opts.sample_dt)?;
        let mut metrics = samples.metrics(report.converged && goal_reached, report.iterations);
        metrics.time = Timing {
            total: prepared.init_time + report.wall_time,
            opt: report.wall_time,
            init: prepared.init_time,
        };
        let init_samples = Samples::from_trajectory(&self.model, &prepared.init, opts.sample_dt)?;
        let mut init_metrics = init_samples.metrics(self.goal_reached(&prepared, &prepared.init)?, 0);
        init_metrics.time.init = prepared.init_time;
        init_metrics.time.total = prepared.init_time;
        Ok(PlanOutcome {
            prepared,
            trajectory,
            report,
            initial_costs,
            final_costs,
            metrics,
            init_metrics,
            goal_reached,
        })
    }

    pub fn plan(&self, opts: &PlanOptions) -> Result<PlanOutcome, ScenarioError> {
        let start = self.start_configuration()?;
        self.plan_from(&start, opts)
    }
}
