//! Kinematic-control baselines for position reaching: damped least-squares
//! tracking and pseudo-inverse tracking with null-space manipulability ascent.

use std::f64::consts::FRAC_PI_3;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::KinematicsError;
use crate::kinematics::pseudo_inverse;
use crate::model::{ChainModel, Configuration};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackerOptions {
    /// Seconds.
    pub dt: f64,
    /// 1/s.
    pub gain: f64,
    /// Smallest singular value below which damping ramps in.
    pub damping_eps: f64,
    pub damping_max: f64,
    pub nullspace_gain: f64,
    /// rad/s, per joint.
    pub vel_limit: f64,
    /// Meters.
    pub pos_tol: f64,
    /// Seconds.
    pub timeout: f64,
}

impl Default for TrackerOptions {
    fn default() -> Self {
        Self {
            dt: 0.02,
            gain: 1.0,
            damping_eps: 0.05,
            damping_max: 0.1,
            nullspace_gain: 1.0,
            vel_limit: FRAC_PI_3,
            pos_tol: 0.01,
            timeout: 30.0,
        }
    }
}

impl TrackerOptions {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt > 0.0) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        for (name, v) in [
            ("gain", self.gain),
            ("nullspace_gain", self.nullspace_gain),
            ("damping_eps", self.damping_eps),
            ("damping_max", self.damping_max),
        ] {
            if !(v >= 0.0) {
                return Err(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if !(self.vel_limit > 0.0) {
            return Err(format!("vel_limit must be positive, got {}", self.vel_limit));
        }
        Ok(())
    }

    /// `λ²` from the smallest singular value: zero above `damping_eps`,
    /// rising quadratically to `damping_max²` at a singularity.
    pub fn damping_sq(&self, smallest_sv: f64) -> f64 {
        if self.damping_eps <= 0.0 || smallest_sv >= self.damping_eps {
            return 0.0;
        }
        let ratio = smallest_sv / self.damping_eps;
        (1.0 - ratio * ratio) * self.damping_max * self.damping_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    DampedLeastSquares,
    NullSpace,
}

fn task_error(model: &ChainModel, q: &Configuration, x_goal: &Vector3<f64>) -> Result<(DVector<f64>, DMatrix<f64>), KinematicsError> {
    let (pos, jac) = model.position_task(q)?;
    let e = DVector::from_fn(pos.len(), |r, _| x_goal[r]) - pos;
    Ok((e, jac))
}

/// Uniform scaling so that no joint exceeds `limit`.
fn clip(mut omega: DVector<f64>, limit: f64) -> DVector<f64> {
    let peak = omega.amax();
    if peak > limit {
        omega *= limit / peak;
    }
    omega
}

fn smallest_sv(jac: &DMatrix<f64>) -> f64 {
    jac.singular_values().min()
}

/// `ω = Jᵀ(JJᵀ + λ²I)⁻¹ · gain·(x_goal − x)`, clipped.
pub fn dls_tracker_step(
    model: &ChainModel,
    q: &Configuration,
    x_goal: &Vector3<f64>,
    opts: &TrackerOptions,
) -> Result<DVector<f64>, KinematicsError> {
    let (e, jac) = task_error(model, q, x_goal)?;
    let rows = jac.nrows();
    let lambda_sq = opts.damping_sq(smallest_sv(&jac));
    let jjt = &jac * jac.transpose() + DMatrix::identity(rows, rows) * lambda_sq;
    let w = match jjt.clone().cholesky() {
        Some(c) => c.solve(&(e * opts.gain)),
        None => pseudo_inverse(&jjt) * (e * opts.gain),
    };
    Ok(clip(jac.transpose() * w, opts.vel_limit))
}

/// `ω = J†·gain·e + (I − J†J)·nullspace_gain·∇m`, clipped.
pub fn nullspace_manip_tracker_step(
    model: &ChainModel,
    q: &Configuration,
    x_goal: &Vector3<f64>,
    opts: &TrackerOptions,
) -> Result<DVector<f64>, KinematicsError> {
    let (e, jac) = task_error(model, q, x_goal)?;
    let n = model.dof();
    if n <= jac.nrows() {
        return dls_tracker_step(model, q, x_goal, opts);
    }
    let pinv = pseudo_inverse(&jac);
    let projector = DMatrix::identity(n, n) - &pinv * &jac;
    let grad = model.manipulability_gradient(q)?;
    let omega = &pinv * (e * opts.gain) + projector * grad * opts.nullspace_gain;
    Ok(clip(omega, opts.vel_limit))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerTrace {
    pub q: Vec<Configuration>,
    /// Velocity applied after each recorded configuration but the last.
    pub omega: Vec<DVector<f64>>,
    pub m: Vec<f64>,
    pub solved: bool,
    /// Seconds.
    pub wall_time: f64,
}

impl TrackerTrace {
    pub fn steps(&self) -> usize {
        self.omega.len()
    }
}

/// Euler rollout `q ← q + dt·ω` until the position error drops below
/// `pos_tol` or `timeout` elapses (simulated time).
pub fn run_tracker(
    model: &ChainModel,
    q0: &Configuration,
    x_goal: &Vector3<f64>,
    opts: &TrackerOptions,
    policy: Policy,
) -> Result<TrackerTrace, KinematicsError> {
    let clock = Instant::now();
    let max_steps = (opts.timeout / opts.dt).ceil() as usize;
    let mut q = q0.clone();
    let mut trace = TrackerTrace {
        q: Vec::new(),
        omega: Vec::new(),
        m: Vec::new(),
        solved: false,
        wall_time: 0.0,
    };
    for step in 0..=max_steps {
        let (e, _) = task_error(model, &q, x_goal)?;
        trace.m.push(model.manipulability(&q)?.m);
        trace.q.push(q.clone());
        if e.norm() < opts.pos_tol {
            trace.solved = true;
            break;
        }
        if step == max_steps {
            break;
        }
        let omega = match policy {
            Policy::DampedLeastSquares => dls_tracker_step(model, &q, x_goal, opts)?,
            Policy::NullSpace => nullspace_manip_tracker_step(model, &q, x_goal, opts)?,
        };
        q += &omega * opts.dt;
        model.clamp_to_limits(&mut q);
        trace.omega.push(omega);
    }
    trace.wall_time = clock.elapsed().as_secs_f64();
    Ok(trace)
}
