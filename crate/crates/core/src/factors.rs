//! Likelihood factors of the MAP objective.
//!
//! Each factor is a residual on a joint configuration, optionally lifted to
//! an interpolated state between two support states. Residuals returned as
//! [`Linearized`] are already whitened: their squared norm is the factor's
//! Mahalanobis cost.

use nalgebra::{DMatrix, DVector, Matrix3xX, Vector3};

use crate::error::{KinematicsError, TrajectoryError};
use crate::gp::{InterpBasis, SupportState};
use crate::model::{ChainModel, Configuration};
use crate::workspace::SdfGrid;

/// Weight and shaping of the log-manipulability cost
/// `h = log((m_max + c) / (m + c))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManipFactorParams {
    pub sigma_s: f64,
    pub c: f64,
    pub m_max: f64,
}

impl ManipFactorParams {
    pub fn new(sigma_s: f64, c: f64, m_max: f64) -> Result<Self, String> {
        for (name, v) in [("sigma_s", sigma_s), ("c", c), ("m_max", m_max)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(Self { sigma_s, c, m_max })
    }

    /// `c` defaults to one percent of `m_max`.
    pub fn with_default_c(sigma_s: f64, m_max: f64) -> Result<Self, String> {
        Self::new(sigma_s, 0.01 * m_max, m_max)
    }

    pub fn cost_from_m(&self, m: f64) -> f64 {
        ((self.m_max + self.c) / (m + self.c)).ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionFactorParams {
    pub sigma_obs: f64,
    /// Safety margin in meters.
    pub eps: f64,
}

impl CollisionFactorParams {
    pub fn new(sigma_obs: f64, eps: f64) -> Result<Self, String> {
        if !(sigma_obs > 0.0) {
            return Err(format!("sigma_obs must be positive, got {sigma_obs}"));
        }
        if !(eps >= 0.0) {
            return Err(format!("eps must be nonnegative, got {eps}"));
        }
        Ok(Self { sigma_obs, eps })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatePriorParams {
    pub mean: SupportState,
    pub sigma_theta: f64,
}

/// Residual of a configuration-level term and its Jacobian in joint space.
#[derive(Clone, Debug)]
pub struct ConfigTerm {
    pub residual: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

impl ConfigTerm {
    fn scaled(mut self, sigma: f64) -> Self {
        let w = sigma.sqrt().recip();
        self.residual *= w;
        self.jacobian *= w;
        self
    }
}

/// Whitened residual with Jacobian blocks per support-state index.
#[derive(Clone, Debug)]
pub struct Linearized {
    pub residual: DVector<f64>,
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

impl Linearized {
    pub fn cost(&self) -> f64 {
        0.5 * self.residual.norm_squared()
    }
}

/// Places a configuration term on support state `index`; the velocity half
/// of the state gets zero Jacobian.
pub fn lift_support(term: ConfigTerm, index: usize) -> Linearized {
    let (rows, n) = term.jacobian.shape();
    let mut block = DMatrix::zeros(rows, 2 * n);
    block.view_mut((0, 0), (rows, n)).copy_from(&term.jacobian);
    Linearized {
        residual: term.residual,
        blocks: vec![(index, block)],
    }
}

/// Chains a configuration term evaluated at `Λ·xᵢ + Ψ·xᵢ₊₁` back to the two
/// support states.
pub fn lift_interpolated(term: ConfigTerm, index: usize, basis: &InterpBasis) -> Linearized {
    let a = &term.jacobian * basis.lambda_position();
    let b = &term.jacobian * basis.psi_position();
    Linearized {
        residual: term.residual,
        blocks: vec![(index, a), (index + 1, b)],
    }
}

/// `θ(τ)` from the two neighbouring stacked states.
pub fn interpolated_configuration(basis: &InterpBasis, xi: &DVector<f64>, xj: &DVector<f64>) -> Configuration {
    basis.lambda_position() * xi + basis.psi_position() * xj
}

/// Log-manipulability cost and its gradient at one configuration.
#[derive(Clone, Debug)]
pub struct ManipEval {
    pub m: f64,
    pub h: f64,
    pub gradient: DVector<f64>,
}

pub fn manip_eval(model: &ChainModel, q: &Configuration, params: &ManipFactorParams) -> Result<ManipEval, KinematicsError> {
    let d = model.manipulability_derivatives(q)?;
    let m = d.report.m;
    let gradient = &d.trace * (-m / (m + params.c));
    Ok(ManipEval {
        m,
        h: params.cost_from_m(m),
        gradient,
    })
}

pub fn manip_cost(model: &ChainModel, q: &Configuration, params: &ManipFactorParams) -> Result<f64, KinematicsError> {
    Ok(params.cost_from_m(model.manipulability(q)?.m))
}

/// Entry `j` is `−(m/(m+c)) · Tr(∂J/∂θⱼ · J†)`.
pub fn manip_cost_gradient(model: &ChainModel, q: &Configuration, params: &ManipFactorParams) -> Result<DVector<f64>, KinematicsError> {
    Ok(manip_eval(model, q, params)?.gradient)
}

pub fn manip_term(model: &ChainModel, q: &Configuration, params: &ManipFactorParams) -> Result<ConfigTerm, KinematicsError> {
    let e = manip_eval(model, q, params)?;
    Ok(ConfigTerm {
        residual: DVector::from_element(1, e.h),
        jacobian: DMatrix::from_row_slice(1, e.gradient.len(), e.gradient.as_slice()),
    }
    .scaled(params.sigma_s))
}

/// Where a manipulability or collision factor is evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Site {
    Support(usize),
    /// Strictly inside interval `[t_interval, t_interval+1]`.
    Interpolated { interval: usize, offset: f64 },
}

/// Manipulability factor at a support state or an interpolated time.
pub fn manip_factor_residual(
    model: &ChainModel,
    states: &[SupportState],
    site: Site,
    basis: Option<&InterpBasis>,
    params: &ManipFactorParams,
) -> Result<Linearized, FactorError> {
    match site {
        Site::Support(i) => {
            let s = states.get(i).ok_or(FactorError::Index(i))?;
            Ok(lift_support(manip_term(model, &s.theta, params)?, i))
        }
        Site::Interpolated { interval, offset } => {
            let basis = check_interp(states, interval, offset, basis)?;
            let xi = states[interval].stacked();
            let xj = states[interval + 1].stacked();
            let q = interpolated_configuration(basis, &xi, &xj);
            Ok(lift_interpolated(manip_term(model, &q, params)?, interval, basis))
        }
    }
}

fn check_interp<'a>(
    states: &[SupportState],
    interval: usize,
    offset: f64,
    basis: Option<&'a InterpBasis>,
) -> Result<&'a InterpBasis, FactorError> {
    if interval + 1 >= states.len() {
        return Err(FactorError::Index(interval));
    }
    let dt = states[interval + 1].time - states[interval].time;
    if !(offset > 0.0 && offset < dt) {
        return Err(TrajectoryError::OutOfRange { tau: offset, total: dt }.into());
    }
    let basis = basis.ok_or(FactorError::MissingBasis)?;
    if (basis.offset - offset).abs() > 1e-12 {
        return Err(FactorError::MissingBasis);
    }
    Ok(basis)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FactorError {
    #[error("support index {0} out of range")]
    Index(usize),
    #[error("interpolation basis missing or for a different offset")]
    MissingBasis,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Per-sphere hinge costs `max(eps − d + r, 0)` and their joint-space
/// Jacobian (one row per sphere).
#[derive(Clone, Debug)]
pub struct CollisionEval {
    pub costs: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// Some sphere center fell outside the field and was treated as free.
    pub out_of_bounds: bool,
}

impl CollisionEval {
    pub fn is_free(&self) -> bool {
        self.costs.iter().all(|c| *c == 0.0)
    }
}

pub fn collision_cost(model: &ChainModel, sdf: &SdfGrid, q: &Configuration, eps: f64) -> Result<CollisionEval, KinematicsError> {
    let frames = model.forward_kinematics(q)?;
    let spheres = model.spheres();
    let n = model.dof();
    let mut costs = DVector::zeros(spheres.len());
    let mut jacobian = DMatrix::zeros(spheres.len(), n);
    let mut out_of_bounds = false;
    for (row, s) in spheres.iter().enumerate() {
        let center = frames.links[s.link] * nalgebra::Point3::from(s.center);
        let sample = sdf.query(&center.coords);
        if !sample.in_bounds {
            out_of_bounds = true;
            continue;
        }
        let hinge = eps - sample.distance + s.radius;
        if hinge > 0.0 {
            costs[row] = hinge;
            let jp: Matrix3xX<f64> = frames.point_jacobian(s.link, &center.coords);
            let grow = -(sample.raw_gradient.transpose() * jp);
            jacobian.row_mut(row).copy_from(&grow);
        }
    }
    Ok(CollisionEval {
        costs,
        jacobian,
        out_of_bounds,
    })
}

pub fn collision_term(
    model: &ChainModel,
    sdf: &SdfGrid,
    q: &Configuration,
    params: &CollisionFactorParams,
) -> Result<ConfigTerm, KinematicsError> {
    let e = collision_cost(model, sdf, q, params.eps)?;
    Ok(ConfigTerm {
        residual: e.costs,
        jacobian: e.jacobian,
    }
    .scaled(params.sigma_obs))
}

/// `fk_pos(q) − goal` with the linear rows of the geometric Jacobian.
pub fn goal_position_residual(
    model: &ChainModel,
    q: &Configuration,
    goal: &Vector3<f64>,
) -> Result<(Vector3<f64>, Matrix3xX<f64>), KinematicsError> {
    let frames = model.forward_kinematics(q)?;
    let full = frames.full_jacobian();
    Ok((frames.ee_position() - goal, full.fixed_rows::<3>(0).into_owned()))
}

pub fn goal_term(model: &ChainModel, q: &Configuration, goal: &Vector3<f64>, sigma: f64) -> Result<ConfigTerm, KinematicsError> {
    let (r, j) = goal_position_residual(model, q, goal)?;
    Ok(ConfigTerm {
        residual: DVector::from_column_slice(r.as_slice()),
        jacobian: DMatrix::from_column_slice(3, j.ncols(), j.as_slice()),
    }
    .scaled(sigma))
}

/// `x − mean` over the stacked `(θ, θ̇)` state; covariance `sigma_theta·I`.
pub fn state_prior_residual(state: &SupportState, params: &StatePriorParams) -> DVector<f64> {
    state.stacked() - params.mean.stacked()
}

pub fn state_prior_linearized(state: &SupportState, index: usize, params: &StatePriorParams) -> Linearized {
    let w = params.sigma_theta.sqrt().recip();
    let dim = 2 * state.dof();
    Linearized {
        residual: state_prior_residual(state, params) * w,
        blocks: vec![(index, DMatrix::identity(dim, dim) * w)],
    }
}
