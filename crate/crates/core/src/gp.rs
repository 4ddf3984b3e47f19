//! Continuous-time trajectory under a constant-velocity Gaussian-process prior.
//!
//! The Markov state at each support time is the stacked pair `x = (θ, θ̇)`.
//! White noise on acceleration with power spectral density `Qc` gives
//!
//! ```text
//! Φ(Δt) = [[I, Δt·I], [0, I]]
//! Q(Δt) = [[Δt³/3·Qc, Δt²/2·Qc], [Δt²/2·Qc, Δt·Qc]]
//! ```
//!
//! and any state between two support states is an affine combination
//! `x(τ) = Λ(τ)·xᵢ + Ψ(τ)·xᵢ₊₁` of its neighbours.

use nalgebra::{DMatrix, DVector};

use crate::error::TrajectoryError;
use crate::model::Configuration;

/// Hyperparameters of the prior and the support-time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GpParams {
    qc: DMatrix<f64>,
    total_time: f64,
    num_support: usize,
}

impl GpParams {
    pub fn new(qc: DMatrix<f64>, total_time: f64, num_support: usize) -> Result<Self, TrajectoryError> {
        if !(total_time > 0.0) || !total_time.is_finite() {
            return Err(TrajectoryError::Params(format!("total time {total_time} must be positive")));
        }
        if num_support < 2 {
            return Err(TrajectoryError::Params(format!(
                "need at least 2 support states, got {num_support}"
            )));
        }
        if !qc.is_square() || qc.nrows() == 0 {
            return Err(TrajectoryError::Params("Qc must be square".into()));
        }
        if (&qc - qc.transpose()).amax() > 1e-12 * qc.amax().max(1.0) {
            return Err(TrajectoryError::Params("Qc must be symmetric".into()));
        }
        if qc.clone().cholesky().is_none() {
            return Err(TrajectoryError::Params("Qc must be positive definite".into()));
        }
        Ok(Self {
            qc,
            total_time,
            num_support,
        })
    }

    /// `Qc = scale · I`.
    pub fn isotropic(dof: usize, scale: f64, total_time: f64, num_support: usize) -> Result<Self, TrajectoryError> {
        Self::new(DMatrix::identity(dof, dof) * scale, total_time, num_support)
    }

    pub fn qc(&self) -> &DMatrix<f64> {
        &self.qc
    }

    pub fn dof(&self) -> usize {
        self.qc.nrows()
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn num_support(&self) -> usize {
        self.num_support
    }

    /// Spacing between support times.
    pub fn dt(&self) -> f64 {
        self.total_time / (self.num_support - 1) as f64
    }

    pub fn support_time(&self, i: usize) -> f64 {
        if i + 1 == self.num_support {
            self.total_time
        } else {
            i as f64 * self.dt()
        }
    }
}

/// State-transition matrix of the constant-velocity model.
pub fn transition_matrix(dof: usize, dt: f64) -> DMatrix<f64> {
    let mut phi = DMatrix::identity(2 * dof, 2 * dof);
    for i in 0..dof {
        phi[(i, dof + i)] = dt;
    }
    phi
}

/// Process covariance accumulated over `dt`.
pub fn process_covariance(qc: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let n = qc.nrows();
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    let blocks = [
        (0, 0, dt.powi(3) / 3.0),
        (0, n, dt.powi(2) / 2.0),
        (n, 0, dt.powi(2) / 2.0),
        (n, n, dt),
    ];
    for (r, c, s) in blocks {
        q.view_mut((r, c), (n, n)).copy_from(&(qc * s));
    }
    q
}

/// `Φ(dt)` and `Q(dt)`.
pub fn transition(params: &GpParams, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), TrajectoryError> {
    if dt < 0.0 || !dt.is_finite() {
        return Err(TrajectoryError::NegativeDt(dt));
    }
    Ok((
        transition_matrix(params.dof(), dt),
        process_covariance(params.qc(), dt),
    ))
}

/// Interpolation matrices for an offset `s` into an interval of length `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpBasis {
    pub offset: f64,
    pub lambda: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl InterpBasis {
    pub fn new(params: &GpParams, offset: f64) -> Result<Self, TrajectoryError> {
        let dt = params.dt();
        if !(0.0..=dt).contains(&offset) {
            return Err(TrajectoryError::OutOfRange {
                tau: offset,
                total: dt,
            });
        }
        let n = params.dof();
        let phi_dt = transition_matrix(n, dt);
        let q_dt = process_covariance(params.qc(), dt);
        let q_dt_inv = q_dt
            .cholesky()
            .expect("Q(dt) is positive definite for dt > 0")
            .inverse();
        // Ψ = Q(s) Φ(dt − s)ᵀ Q(dt)⁻¹,  Λ = Φ(s) − Ψ Φ(dt)
        let psi = process_covariance(params.qc(), offset) * transition_matrix(n, dt - offset).transpose() * q_dt_inv;
        let lambda = transition_matrix(n, offset) - &psi * phi_dt;
        Ok(Self { offset, lambda, psi })
    }

    /// Rows of Λ that produce joint positions.
    pub fn lambda_position(&self) -> DMatrix<f64> {
        let n = self.lambda.nrows() / 2;
        self.lambda.rows(0, n).into_owned()
    }

    pub fn psi_position(&self) -> DMatrix<f64> {
        let n = self.psi.nrows() / 2;
        self.psi.rows(0, n).into_owned()
    }

    pub fn apply(&self, xi: &DVector<f64>, xj: &DVector<f64>) -> DVector<f64> {
        &self.lambda * xi + &self.psi * xj
    }
}

/// Positions and velocities at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportState {
    pub theta: DVector<f64>,
    pub theta_dot: DVector<f64>,
    pub time: f64,
}

impl SupportState {
    pub fn new(theta: DVector<f64>, theta_dot: DVector<f64>, time: f64) -> Self {
        debug_assert_eq!(theta.len(), theta_dot.len());
        Self {
            theta,
            theta_dot,
            time,
        }
    }

    pub fn dof(&self) -> usize {
        self.theta.len()
    }

    /// `(θ, θ̇)` stacked into one 2n-vector.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.dof();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.theta);
        x.rows_mut(n, n).copy_from(&self.theta_dot);
        x
    }

    pub fn from_stacked(x: &DVector<f64>, time: f64) -> Self {
        let n = x.len() / 2;
        Self {
            theta: x.rows(0, n).into_owned(),
            theta_dot: x.rows(n, n).into_owned(),
            time,
        }
    }
}

/// An interpolated state together with the matrices that produced it.
#[derive(Clone, Debug)]
pub struct Interpolated {
    pub state: SupportState,
    /// Index `i` of the interval `[tᵢ, tᵢ₊₁]` containing τ.
    pub interval: usize,
    pub basis: InterpBasis,
}

/// Support states on a uniform time grid plus the prior they were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct GpTrajectory {
    states: Vec<SupportState>,
    params: GpParams,
    prior_mean: Vec<SupportState>,
}

impl GpTrajectory {
    /// Straight joint-space line from `start` to `goal` at constant velocity.
    /// The result is both the initialization and the prior mean.
    pub fn constant_velocity(
        start: &Configuration,
        goal: &Configuration,
        params: GpParams,
    ) -> Result<Self, TrajectoryError> {
        let n = params.dof();
        for q in [start, goal] {
            if q.len() != n {
                return Err(TrajectoryError::Dimension {
                    expected: n,
                    got: q.len(),
                });
            }
        }
        let total = params.total_time();
        let velocity = (goal - start) / total;
        let states: Vec<SupportState> = (0..params.num_support())
            .map(|i| {
                let t = params.support_time(i);
                let theta = start + (goal - start) * (t / total);
                SupportState::new(theta, velocity.clone(), t)
            })
            .collect();
        Ok(Self {
            prior_mean: states.clone(),
            states,
            params,
        })
    }

    /// Piecewise-linear path through `waypoints` (start first, goal last),
    /// each leg given an equal share of the total time.
    pub fn through_waypoints(waypoints: &[Configuration], params: GpParams) -> Result<Self, TrajectoryError> {
        let n = params.dof();
        if waypoints.len() < 2 {
            return Err(TrajectoryError::Params("need at least two waypoints".into()));
        }
        if let Some(bad) = waypoints.iter().find(|w| w.len() != n) {
            return Err(TrajectoryError::Dimension {
                expected: n,
                got: bad.len(),
            });
        }
        let legs = waypoints.len() - 1;
        let leg_time = params.total_time() / legs as f64;
        let states: Vec<SupportState> = (0..params.num_support())
            .map(|i| {
                let t = params.support_time(i);
                let leg = ((t / leg_time) as usize).min(legs - 1);
                let a = &waypoints[leg];
                let b = &waypoints[leg + 1];
                let s = (t - leg as f64 * leg_time) / leg_time;
                SupportState::new(a + (b - a) * s, (b - a) / leg_time, t)
            })
            .collect();
        Ok(Self {
            prior_mean: states.clone(),
            states,
            params,
        })
    }

    /// Replaces the support states, keeping the prior mean.
    pub fn with_states(&self, states: Vec<SupportState>) -> Result<Self, TrajectoryError> {
        if states.len() != self.params.num_support() {
            return Err(TrajectoryError::Dimension {
                expected: self.params.num_support(),
                got: states.len(),
            });
        }
        Ok(Self {
            states,
            params: self.params.clone(),
            prior_mean: self.prior_mean.clone(),
        })
    }

    pub fn from_stacked(&self, x: &[DVector<f64>]) -> Self {
        let states = x
            .iter()
            .enumerate()
            .map(|(i, xi)| SupportState::from_stacked(xi, self.params.support_time(i)))
            .collect();
        Self {
            states,
            params: self.params.clone(),
            prior_mean: self.prior_mean.clone(),
        }
    }

    pub fn stacked(&self) -> Vec<DVector<f64>> {
        self.states.iter().map(SupportState::stacked).collect()
    }

    pub fn states(&self) -> &[SupportState] {
        &self.states
    }

    pub fn prior_mean(&self) -> &[SupportState] {
        &self.prior_mean
    }

    pub fn params(&self) -> &GpParams {
        &self.params
    }

    pub fn dof(&self) -> usize {
        self.params.dof()
    }

    /// State at time τ. The mean terms of the conditional cancel because the
    /// prior mean itself follows the constant-velocity dynamics, leaving
    /// `Λ(τ)·xᵢ + Ψ(τ)·xᵢ₊₁`.
    pub fn interpolate(&self, tau: f64) -> Result<Interpolated, TrajectoryError> {
        let total = self.params.total_time();
        if !(0.0..=total).contains(&tau) {
            return Err(TrajectoryError::OutOfRange { tau, total });
        }
        let dt = self.params.dt();
        let last = self.params.num_support() - 2;
        let interval = ((tau / dt).floor() as usize).min(last);
        let offset = (tau - self.params.support_time(interval)).clamp(0.0, dt);
        let basis = InterpBasis::new(&self.params, offset)?;
        let x = basis.apply(&self.states[interval].stacked(), &self.states[interval + 1].stacked());
        Ok(Interpolated {
            state: SupportState::from_stacked(&x, tau),
            interval,
            basis,
        })
    }

    /// States sampled every `step` seconds from 0 to T inclusive.
    pub fn sample(&self, step: f64) -> Vec<SupportState> {
        assert!(step > 0.0, "sampling step must be positive");
        let total = self.params.total_time();
        let count = (total / step).round() as usize;
        let mut out = Vec::with_capacity(count + 1);
        for k in 0..=count {
            let tau = (k as f64 * step).min(total);
            out.push(self.interpolate(tau).expect("tau within range").state);
        }
        if out.last().map(|s| s.time) != Some(total) {
            out.push(self.interpolate(total).expect("tau within range").state);
        }
        out
    }

    /// Support states plus `per_interval` evenly spaced interior states in
    /// every interval, in time order.
    pub fn dense_states(&self, per_interval: usize) -> Vec<SupportState> {
        let dt = self.params.dt();
        let mut out = Vec::new();
        for i in 0..self.params.num_support() - 1 {
            out.push(self.states[i].clone());
            if per_interval > 0 {
                let xi = self.states[i].stacked();
                let xj = self.states[i + 1].stacked();
                for k in 1..=per_interval {
                    let offset = dt * k as f64 / (per_interval + 1) as f64;
                    let basis = InterpBasis::new(&self.params, offset).expect("offset within interval");
                    let t = self.params.support_time(i) + offset;
                    out.push(SupportState::from_stacked(&basis.apply(&xi, &xj), t));
                }
            }
        }
        out.push(self.states.last().expect("at least two states").clone());
        out
    }
}

/// Constant-velocity prior between two consecutive support states.
///
/// Residual `Φ(Δt)·xᵢ − xᵢ₊₁` with covariance `Q(Δt)`; both Jacobians are
/// constant. Whitening multiplies by the inverse Cholesky factor of `Q(Δt)`.
#[derive(Clone, Debug)]
pub struct GpPriorFactor {
    pub phi: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    whiten: DMatrix<f64>,
}

impl GpPriorFactor {
    pub fn new(params: &GpParams) -> Self {
        let (phi, cov) = transition(params, params.dt()).expect("dt > 0");
        let chol = cov.clone().cholesky().expect("Q(dt) is positive definite");
        let whiten = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(cov.nrows(), cov.nrows()))
            .expect("Cholesky factor is invertible");
        Self { phi, cov, whiten }
    }

    pub fn residual(&self, xi: &DVector<f64>, xj: &DVector<f64>) -> DVector<f64> {
        &self.phi * xi - xj
    }

    pub fn whitened_residual(&self, xi: &DVector<f64>, xj: &DVector<f64>) -> DVector<f64> {
        &self.whiten * self.residual(xi, xj)
    }

    /// Whitened Jacobians with respect to `xᵢ` and `xᵢ₊₁`.
    pub fn whitened_jacobians(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (&self.whiten * &self.phi, -&self.whiten)
    }

    /// `rᵀ Q⁻¹ r`.
    pub fn mahalanobis_sq(&self, xi: &DVector<f64>, xj: &DVector<f64>) -> f64 {
        self.whitened_residual(xi, xj).norm_squared()
    }
}

/// Sum of squared Mahalanobis prior residuals over all intervals.
/// Twice the smoothness cost reported in metrics.
pub fn prior_energy(traj: &GpTrajectory) -> f64 {
    let factor = GpPriorFactor::new(traj.params());
    let x = traj.stacked();
    x.windows(2).map(|w| factor.mahalanobis_sq(&w[0], &w[1])).sum()
}
