//! Goal configurations by numerical inverse kinematics, and selection of the
//! straight-line initialization that stays farthest from singularities.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KinematicsError, ScenarioError};
use crate::gp::{GpParams, GpTrajectory};
use crate::model::{ChainModel, Configuration};

/// Candidates closer than this (joint-space Euclidean norm) are duplicates.
pub const DEDUP_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkOptions {
    pub num_solutions: usize,
    pub max_iters: usize,
    /// Meters.
    pub pos_tol: f64,
    pub damping: f64,
    pub seed: u64,
    /// Random restarts tried per requested solution before giving up.
    pub attempts_per_solution: usize,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            num_solutions: 20,
            max_iters: 300,
            pos_tol: 1e-4,
            damping: 0.1,
            seed: 0,
            attempts_per_solution: 10,
        }
    }
}

impl IkOptions {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_solutions < 1 {
            return Err("ik.num_solutions must be at least 1".into());
        }
        if !(self.pos_tol > 0.0) {
            return Err(format!("ik.pos_tol must be positive, got {}", self.pos_tol));
        }
        if !(self.damping >= 0.0) {
            return Err(format!("ik.damping must be nonnegative, got {}", self.damping));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkSolution {
    pub config: Configuration,
    pub iterations: usize,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("inverse kinematics did not converge (residual {error:.3e} m)")]
pub struct IkFailure {
    pub error: f64,
}

fn goal_rows(x_goal: &Vector3<f64>, rows: usize) -> DVector<f64> {
    DVector::from_fn(rows, |r, _| x_goal[r])
}

/// Damped least squares from `seed_config`, clamping to joint limits after
/// every update. Only the first `min(p, 3)` position coordinates are matched.
pub fn ik_solve(
    model: &ChainModel,
    x_goal: &Vector3<f64>,
    seed_config: &Configuration,
    opts: &IkOptions,
) -> Result<Result<IkSolution, IkFailure>, KinematicsError> {
    let mut q = seed_config.clone();
    model.clamp_to_limits(&mut q);
    let lambda_sq = opts.damping * opts.damping;
    let mut error = f64::INFINITY;
    for iterations in 0..=opts.max_iters {
        let (pos, jac) = model.position_task(&q)?;
        let e = goal_rows(x_goal, pos.len()) - pos;
        error = e.norm();
        if error < opts.pos_tol {
            return Ok(Ok(IkSolution {
                config: q,
                iterations,
                error,
            }));
        }
        if iterations == opts.max_iters {
            break;
        }
        let rows = jac.nrows();
        let jjt = &jac * jac.transpose() + DMatrix::identity(rows, rows) * lambda_sq;
        let Some(w) = jjt.cholesky().map(|c| c.solve(&e)) else {
            break;
        };
        let mut step = jac.transpose() * w;
        let norm = step.amax();
        if norm > 0.5 {
            step *= 0.5 / norm;
        }
        q += step;
        model.clamp_to_limits(&mut q);
    }
    Ok(Err(IkFailure { error }))
}

/// Up to `num_solutions` distinct IK solutions from uniform random restarts.
/// The restart stream depends only on the seed, so a smaller request returns
/// a prefix of a larger one.
pub fn ik_candidates(
    model: &ChainModel,
    x_goal: &Vector3<f64>,
    opts: &IkOptions,
) -> Result<Vec<Configuration>, KinematicsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut found: Vec<Configuration> = Vec::new();
    let attempts = opts.num_solutions * opts.attempts_per_solution.max(1);
    for _ in 0..attempts {
        if found.len() == opts.num_solutions {
            break;
        }
        let seed = model.sample_configuration(&mut rng);
        if let Ok(sol) = ik_solve(model, x_goal, &seed, opts)? {
            if found.iter().all(|f| (f - &sol.config).norm() >= DEDUP_TOL) {
                found.push(sol.config);
            }
        }
    }
    Ok(found)
}

/// Manipulability along one candidate's straight-line initialization.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct CandidateScore {
    pub goal: Vec<f64>,
    pub min_m: f64,
    pub mean_m: f64,
}

/// Index of the best candidate: largest minimum manipulability, then
/// largest mean, then lowest index.
pub fn select_candidate(scores: &[CandidateScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &scores[b];
                s.min_m > cur.min_m || (s.min_m == cur.min_m && s.mean_m > cur.mean_m)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Scores the straight line from `start` to `goal` on the support states plus
/// `per_interval` interpolated states per interval.
pub fn score_straight_line(
    model: &ChainModel,
    start: &Configuration,
    goal: &Configuration,
    params: &GpParams,
    per_interval: usize,
) -> Result<(GpTrajectory, CandidateScore), ScenarioError> {
    let traj = GpTrajectory::constant_velocity(start, goal, params.clone())?;
    let mut min_m = f64::INFINITY;
    let mut sum = 0.0;
    let dense = traj.dense_states(per_interval);
    for s in &dense {
        let m = model.manipulability(&s.theta)?.m;
        min_m = min_m.min(m);
        sum += m;
    }
    let score = CandidateScore {
        goal: goal.iter().copied().collect(),
        min_m,
        mean_m: sum / dense.len() as f64,
    };
    Ok((traj, score))
}

#[derive(Clone, Debug)]
pub struct Initialization {
    pub trajectory: GpTrajectory,
    pub goal: Configuration,
    pub selected: usize,
    pub candidates: Vec<CandidateScore>,
}

/// Straight-line initialization toward the IK candidate whose path has the
/// greatest minimum manipulability.
pub fn best_initialization(
    model: &ChainModel,
    start: &Configuration,
    x_goal: &Vector3<f64>,
    params: &GpParams,
    opts: &IkOptions,
    per_interval: usize,
) -> Result<Initialization, ScenarioError> {
    opts.validate().map_err(ScenarioError::Invalid)?;
    let goals = ik_candidates(model, x_goal, opts)?;
    if goals.is_empty() {
        return Err(ScenarioError::Unreachable(format!(
            "no IK solution for ({:.4}, {:.4}, {:.4})",
            x_goal.x, x_goal.y, x_goal.z
        )));
    }
    let mut trajectories = Vec::with_capacity(goals.len());
    let mut candidates = Vec::with_capacity(goals.len());
    for g in &goals {
        let (traj, score) = score_straight_line(model, start, g, params, per_interval)?;
        trajectories.push(traj);
        candidates.push(score);
    }
    let selected = select_candidate(&candidates).expect("at least one candidate");
    Ok(Initialization {
        trajectory: trajectories.swap_remove(selected),
        goal: goals[selected].clone(),
        selected,
        candidates,
    })
}
