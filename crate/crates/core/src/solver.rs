//! MAP estimation over the support states.
//!
//! The objective is a sum of whitened squared residuals. Every factor touches
//! one support state or two consecutive ones, so the Gauss-Newton information
//! matrix is block-tridiagonal and each Levenberg-Marquardt step is a banded
//! Cholesky solve.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::SolveError;
use crate::factors::{
    collision_term, goal_term, interpolated_configuration, lift_interpolated, lift_support, manip_term,
    state_prior_linearized, CollisionFactorParams, ConfigTerm, Linearized, ManipFactorParams, Site, StatePriorParams,
};
use crate::gp::{GpParams, GpPriorFactor, GpTrajectory, InterpBasis, SupportState};
use crate::linear::BlockTridiagonal;
use crate::model::{ChainModel, Configuration};
use crate::workspace::SdfGrid;
use crate::KinematicsError;

#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    /// Constant-velocity prior between states `index` and `index + 1`.
    GpPrior { index: usize },
    StatePrior { index: usize, params: StatePriorParams },
    Manipulability { site: Site },
    Collision { site: Site },
    /// End-effector position of support state `index`.
    GoalPosition { index: usize, goal: Vector3<f64>, sigma: f64 },
    /// `A·θ − b` at support state `index`.
    Linear {
        index: usize,
        a: DMatrix<f64>,
        b: DVector<f64>,
        sigma: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FactorKind {
    GpPrior,
    StatePrior,
    Manipulability,
    Collision,
    GoalPosition,
    Linear,
}

impl Factor {
    pub fn kind(&self) -> FactorKind {
        match self {
            Factor::GpPrior { .. } => FactorKind::GpPrior,
            Factor::StatePrior { .. } => FactorKind::StatePrior,
            Factor::Manipulability { .. } => FactorKind::Manipulability,
            Factor::Collision { .. } => FactorKind::Collision,
            Factor::GoalPosition { .. } => FactorKind::GoalPosition,
            Factor::Linear { .. } => FactorKind::Linear,
        }
    }

    /// Support states the factor depends on.
    pub fn adjacency(&self) -> Vec<usize> {
        match self {
            Factor::GpPrior { index } => vec![*index, index + 1],
            Factor::StatePrior { index, .. } | Factor::GoalPosition { index, .. } | Factor::Linear { index, .. } => {
                vec![*index]
            }
            Factor::Manipulability { site } | Factor::Collision { site } => match site {
                Site::Support(i) => vec![*i],
                Site::Interpolated { interval, .. } => vec![*interval, interval + 1],
            },
        }
    }
}

/// Per-kind cost totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct CostBreakdown {
    pub gp_prior: f64,
    pub state_prior: f64,
    pub manipulability: f64,
    pub collision: f64,
    pub goal: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.gp_prior + self.state_prior + self.manipulability + self.collision + self.goal
    }
}

/// Factors over `num_support` states of dimension `2n`, sharing one robot
/// model and optionally one distance field.
#[derive(Clone, Debug)]
pub struct FactorGraph<'a> {
    model: &'a ChainModel,
    params: GpParams,
    prior: GpPriorFactor,
    manip: Option<ManipFactorParams>,
    collision: Option<(&'a SdfGrid, CollisionFactorParams)>,
    bases: Vec<InterpBasis>,
    fixed: Vec<Option<DVector<f64>>>,
    factors: Vec<Factor>,
}

impl<'a> FactorGraph<'a> {
    /// Graph holding only the GP prior chain.
    pub fn new(model: &'a ChainModel, params: GpParams) -> Result<Self, SolveError> {
        if params.dof() != model.dof() {
            return Err(SolveError::Inconsistent(format!(
                "GP prior has {} joints, model has {}",
                params.dof(),
                model.dof()
            )));
        }
        let count = params.num_support();
        Ok(Self {
            model,
            prior: GpPriorFactor::new(&params),
            manip: None,
            collision: None,
            bases: Vec::new(),
            fixed: vec![None; count],
            factors: (0..count - 1).map(|index| Factor::GpPrior { index }).collect(),
            params,
        })
    }

    pub fn model(&self) -> &ChainModel {
        self.model
    }

    pub fn params(&self) -> &GpParams {
        &self.params
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn count(&self, kind: FactorKind) -> usize {
        self.factors.iter().filter(|f| f.kind() == kind).count()
    }

    pub fn num_states(&self) -> usize {
        self.params.num_support()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.params.dof()
    }

    fn check_index(&self, index: usize) -> Result<(), SolveError> {
        if index >= self.num_states() {
            return Err(SolveError::Inconsistent(format!(
                "support index {index} out of range for {} states",
                self.num_states()
            )));
        }
        Ok(())
    }

    fn check_state(&self, state: &SupportState) -> Result<(), SolveError> {
        let n = self.params.dof();
        if state.theta.len() != n || state.theta_dot.len() != n {
            return Err(SolveError::Inconsistent(format!("state dimension differs from {n} joints")));
        }
        Ok(())
    }

    pub fn add_state_prior(&mut self, index: usize, mean: SupportState, sigma_theta: f64) -> Result<(), SolveError> {
        self.check_index(index)?;
        self.check_state(&mean)?;
        if !(sigma_theta > 0.0) {
            return Err(SolveError::Inconsistent(format!("state prior sigma {sigma_theta} must be positive")));
        }
        self.factors.push(Factor::StatePrior {
            index,
            params: StatePriorParams { mean, sigma_theta },
        });
        Ok(())
    }

    /// Holds support state `index` at `value` during the solve.
    pub fn fix_state(&mut self, index: usize, value: &SupportState) -> Result<(), SolveError> {
        self.check_index(index)?;
        self.check_state(value)?;
        self.fixed[index] = Some(value.stacked());
        Ok(())
    }

    pub fn is_fixed(&self, index: usize) -> bool {
        self.fixed.get(index).is_some_and(Option::is_some)
    }

    fn interp_offsets(&self, per_interval: usize) -> Vec<f64> {
        let dt = self.params.dt();
        (1..=per_interval)
            .map(|k| dt * k as f64 / (per_interval + 1) as f64)
            .collect()
    }

    fn ensure_bases(&mut self, per_interval: usize) -> Result<(), SolveError> {
        for offset in self.interp_offsets(per_interval) {
            if self.basis(offset).is_none() {
                self.bases.push(InterpBasis::new(&self.params, offset)?);
            }
        }
        Ok(())
    }

    fn basis(&self, offset: f64) -> Option<&InterpBasis> {
        self.bases.iter().find(|b| (b.offset - offset).abs() <= 1e-12)
    }

    fn sites(&self, per_interval: usize) -> Vec<Site> {
        let offsets = self.interp_offsets(per_interval);
        let mut sites: Vec<Site> = (0..self.num_states()).map(Site::Support).collect();
        for interval in 0..self.num_states() - 1 {
            for &offset in &offsets {
                sites.push(Site::Interpolated { interval, offset });
            }
        }
        sites
    }

    /// Manipulability factors on every support state and `per_interval`
    /// evenly spaced interpolated times inside each interval.
    pub fn add_manipulability(&mut self, params: ManipFactorParams, per_interval: usize) -> Result<(), SolveError> {
        self.ensure_bases(per_interval)?;
        self.manip = Some(params);
        for site in self.sites(per_interval) {
            self.factors.push(Factor::Manipulability { site });
        }
        Ok(())
    }

    pub fn add_collision(
        &mut self,
        sdf: &'a SdfGrid,
        params: CollisionFactorParams,
        per_interval: usize,
    ) -> Result<(), SolveError> {
        if self.model.spheres().is_empty() {
            return Err(SolveError::Inconsistent("collision factors need collision spheres on the model".into()));
        }
        self.ensure_bases(per_interval)?;
        self.collision = Some((sdf, params));
        for site in self.sites(per_interval) {
            self.factors.push(Factor::Collision { site });
        }
        Ok(())
    }

    pub fn add_goal_position(&mut self, index: usize, goal: Vector3<f64>, sigma: f64) -> Result<(), SolveError> {
        self.check_index(index)?;
        if !(sigma > 0.0) {
            return Err(SolveError::Inconsistent(format!("goal sigma {sigma} must be positive")));
        }
        self.factors.push(Factor::GoalPosition { index, goal, sigma });
        Ok(())
    }

    pub fn add_linear(&mut self, index: usize, a: DMatrix<f64>, b: DVector<f64>, sigma: f64) -> Result<(), SolveError> {
        self.check_index(index)?;
        if a.ncols() != self.params.dof() || a.nrows() != b.len() || !(sigma > 0.0) {
            return Err(SolveError::Inconsistent("linear factor dimensions or sigma invalid".into()));
        }
        self.factors.push(Factor::Linear { index, a, b, sigma });
        Ok(())
    }

    fn check_states(&self, states: &[DVector<f64>]) -> Result<(), SolveError> {
        if states.len() != self.num_states() || states.iter().any(|x| x.len() != self.state_dim()) {
            return Err(SolveError::Inconsistent(format!(
                "expected {} states of dimension {}",
                self.num_states(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    fn site_term<F>(&self, site: Site, states: &[DVector<f64>], term: F) -> Result<Linearized, SolveError>
    where
        F: Fn(&Configuration) -> Result<ConfigTerm, KinematicsError>,
    {
        let n = self.params.dof();
        match site {
            Site::Support(i) => {
                let q = states[i].rows(0, n).into_owned();
                Ok(lift_support(term(&q)?, i))
            }
            Site::Interpolated { interval, offset } => {
                let basis = self
                    .basis(offset)
                    .ok_or_else(|| SolveError::Inconsistent(format!("no interpolation basis for offset {offset}")))?;
                let q = interpolated_configuration(basis, &states[interval], &states[interval + 1]);
                Ok(lift_interpolated(term(&q)?, interval, basis))
            }
        }
    }

    /// Whitened residual and Jacobian blocks of one factor.
    pub fn linearize(&self, factor: &Factor, states: &[DVector<f64>]) -> Result<Linearized, SolveError> {
        let n = self.params.dof();
        match factor {
            Factor::GpPrior { index } => {
                let (a, b) = self.prior.whitened_jacobians();
                Ok(Linearized {
                    residual: self.prior.whitened_residual(&states[*index], &states[index + 1]),
                    blocks: vec![(*index, a), (index + 1, b)],
                })
            }
            Factor::StatePrior { index, params } => {
                let state = SupportState::from_stacked(&states[*index], self.params.support_time(*index));
                Ok(state_prior_linearized(&state, *index, params))
            }
            Factor::Manipulability { site } => {
                let params = self.manip.as_ref().expect("manipulability parameters set with the factors");
                self.site_term(*site, states, |q| manip_term(self.model, q, params))
            }
            Factor::Collision { site } => {
                let (sdf, params) = self.collision.as_ref().expect("collision field set with the factors");
                self.site_term(*site, states, |q| collision_term(self.model, sdf, q, params))
            }
            Factor::GoalPosition { index, goal, sigma } => {
                let q = states[*index].rows(0, n).into_owned();
                Ok(lift_support(goal_term(self.model, &q, goal, *sigma)?, *index))
            }
            Factor::Linear { index, a, b, sigma } => {
                let q = states[*index].rows(0, n).into_owned();
                let w = sigma.sqrt().recip();
                let term = ConfigTerm {
                    residual: (a * q - b) * w,
                    jacobian: a * w,
                };
                Ok(lift_support(term, *index))
            }
        }
    }

    pub fn linearize_all(&self, states: &[DVector<f64>]) -> Result<Vec<Linearized>, SolveError> {
        self.check_states(states)?;
        self.factors.iter().map(|f| self.linearize(f, states)).collect()
    }

    /// Cost of each factor, in factor order.
    pub fn factor_costs(&self, states: &[DVector<f64>]) -> Result<Vec<f64>, SolveError> {
        Ok(self.linearize_all(states)?.iter().map(Linearized::cost).collect())
    }

    pub fn breakdown(&self, states: &[DVector<f64>]) -> Result<CostBreakdown, SolveError> {
        let costs = self.factor_costs(states)?;
        let mut out = CostBreakdown::default();
        for (f, c) in self.factors.iter().zip(costs) {
            match f.kind() {
                FactorKind::GpPrior => out.gp_prior += c,
                FactorKind::StatePrior => out.state_prior += c,
                FactorKind::Manipulability => out.manipulability += c,
                FactorKind::Collision => out.collision += c,
                FactorKind::GoalPosition | FactorKind::Linear => out.goal += c,
            }
        }
        Ok(out)
    }

    pub fn total_cost(&self, states: &[DVector<f64>]) -> Result<f64, SolveError> {
        Ok(self.factor_costs(states)?.iter().sum())
    }

    pub fn trajectory_cost(&self, traj: &GpTrajectory) -> Result<f64, SolveError> {
        self.total_cost(&traj.stacked())
    }

    /// Gauss-Newton normal equations `JᵀJ·δ = −Jᵀr` at `states`, with the
    /// total cost. Fixed states get identity blocks and zero right-hand side.
    pub fn normal_equations(&self, states: &[DVector<f64>]) -> Result<(BlockTridiagonal, f64), SolveError> {
        let lin = self.linearize_all(states)?;
        let mut sys = BlockTridiagonal::zeros(self.num_states(), self.state_dim());
        let mut cost = 0.0;
        for l in &lin {
            cost += l.cost();
            for (i, ji) in &l.blocks {
                sys.rhs[*i] -= ji.transpose() * &l.residual;
                for (j, jj) in &l.blocks {
                    if i == j {
                        sys.diag[*i] += ji.transpose() * jj;
                    } else if j == &(i + 1) {
                        sys.upper[*i] += ji.transpose() * jj;
                    } else if i != &(j + 1) {
                        return Err(SolveError::Inconsistent(format!(
                            "factor couples non-adjacent states {i} and {j}"
                        )));
                    }
                }
            }
        }
        let dim = self.state_dim();
        for (i, fixed) in self.fixed.iter().enumerate() {
            if fixed.is_some() {
                sys.diag[i] = DMatrix::identity(dim, dim);
                sys.rhs[i].fill(0.0);
                if i > 0 {
                    sys.upper[i - 1].fill(0.0);
                }
                if i + 1 < self.num_states() {
                    sys.upper[i].fill(0.0);
                }
            }
        }
        Ok((sys, cost))
    }

    fn apply_fixed(&self, states: &mut [DVector<f64>]) {
        for (x, fixed) in states.iter_mut().zip(&self.fixed) {
            if let Some(v) = fixed {
                x.copy_from(v);
            }
        }
    }

    fn clamp(&self, states: &mut [DVector<f64>]) {
        let n = self.params.dof();
        let lower = self.model.lower_limits();
        let upper = self.model.upper_limits();
        for x in states.iter_mut() {
            for j in 0..n {
                x[j] = x[j].clamp(lower[j], upper[j]);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub lm_damping_init: f64,
    /// Damping above which the solve stops: no step reduces the cost.
    pub lm_damping_max: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol_rel: 1e-6,
            tol_abs: 1e-12,
            lm_damping_init: 1e-4,
            lm_damping_max: 1e10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    RelativeDecrease,
    AbsoluteCost,
    /// The solved step is numerically zero.
    Stationary,
    DampingLimit,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SolveReport {
    /// Accepted steps.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub termination: Termination,
    /// Seconds.
    pub wall_time: f64,
    /// Cost after initialization and after every accepted step.
    pub cost_trace: Vec<f64>,
}

/// Levenberg-Marquardt with Marquardt (diagonal) scaling. Joint positions are
/// clamped to the model limits after every step, before the step is scored.
pub fn solve(graph: &FactorGraph, init: &GpTrajectory, opts: &SolverOptions) -> Result<(GpTrajectory, SolveReport), SolveError> {
    let clock = Instant::now();
    let mut x = init.stacked();
    graph.check_states(&x)?;
    graph.apply_fixed(&mut x);
    let mut cost = graph.total_cost(&x)?;
    if !cost.is_finite() {
        return Err(SolveError::Diverged { iteration: 0 });
    }
    let initial_cost = cost;
    let mut trace = vec![cost];
    let mut lambda = opts.lm_damping_init;
    let mut iterations = 0;
    let termination = 'outer: loop {
        if cost < opts.tol_abs {
            break Termination::AbsoluteCost;
        }
        if iterations >= opts.max_iters {
            break Termination::MaxIterations;
        }
        let (sys, lin_cost) = graph.normal_equations(&x)?;
        if !lin_cost.is_finite() {
            return Err(SolveError::Diverged { iteration: iterations });
        }
        let floor = sys.diag.iter().map(|d| d.diagonal().amax()).fold(0.0, f64::max) * 1e-12;
        loop {
            let mut damped = sys.clone();
            for d in damped.diag.iter_mut() {
                for k in 0..d.nrows() {
                    d[(k, k)] += lambda * d[(k, k)].max(floor);
                }
            }
            let step = damped.solve();
            let Some(step) = step.filter(|s| s.iter().all(|v| v.iter().all(|e| e.is_finite()))) else {
                lambda = next_damping(lambda, opts);
                if lambda > opts.lm_damping_max {
                    break 'outer Termination::DampingLimit;
                }
                continue;
            };
            let scale = 1.0 + x.iter().map(|v| v.amax()).fold(0.0, f64::max);
            if step.iter().map(|s| s.amax()).fold(0.0, f64::max) <= 1e-12 * scale {
                break 'outer Termination::Stationary;
            }
            let mut candidate: Vec<DVector<f64>> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            graph.clamp(&mut candidate);
            graph.apply_fixed(&mut candidate);
            let new_cost = graph.total_cost(&candidate)?;
            if new_cost.is_finite() && new_cost < cost {
                let rel = (cost - new_cost) / cost;
                x = candidate;
                cost = new_cost;
                trace.push(cost);
                iterations += 1;
                lambda = (lambda / 10.0).max(1e-12);
                if rel < opts.tol_rel {
                    break 'outer Termination::RelativeDecrease;
                }
                break;
            }
            lambda = next_damping(lambda, opts);
            if lambda > opts.lm_damping_max {
                break 'outer Termination::DampingLimit;
            }
        }
    };
    let report = SolveReport {
        iterations,
        initial_cost,
        final_cost: cost,
        converged: termination != Termination::MaxIterations,
        termination,
        wall_time: clock.elapsed().as_secs_f64(),
        cost_trace: trace,
    };
    Ok((init.from_stacked(&x), report))
}

fn next_damping(lambda: f64, opts: &SolverOptions) -> f64 {
    if lambda > 0.0 {
        lambda * 10.0
    } else {
        opts.lm_damping_init.max(1e-4)
    }
}
