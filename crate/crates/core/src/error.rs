use thiserror::Error;

/// Errors raised while loading or validating a chain model.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("chain has {joints} joints but task dimension {task_dim}; need at least as many joints as task rows")]
    TooFewJoints { joints: usize, task_dim: usize },
    #[error("unsupported task dimension {0} (expected 2, 3 or 6)")]
    TaskDim(usize),
    #[error("joint {joint}: axis norm {norm} is not 1")]
    AxisNotUnit { joint: usize, norm: f64 },
    #[error("joint {joint}: lower limit {lower} must be below upper limit {upper}")]
    Limits { joint: usize, lower: f64, upper: f64 },
    #[error("collision sphere {sphere}: {reason}")]
    Sphere { sphere: usize, reason: String },
    #[error("model has no joints")]
    Empty,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read model file: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors raised by kinematic queries.
#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("configuration has {got} entries, model has {expected} joints")]
    Dimension { expected: usize, got: usize },
    #[error("joint index {index} out of range for {joints} joints")]
    JointIndex { index: usize, joints: usize },
    #[error("configuration contains non-finite entries")]
    NonFinite,
}

/// Errors raised by trajectory construction and interpolation.
#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("negative time step {0}")]
    NegativeDt(f64),
    #[error("query time {tau} outside [0, {total}]")]
    OutOfRange { tau: f64, total: f64 },
    #[error("invalid GP parameters: {0}")]
    Params(String),
    #[error("state dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Errors raised while assembling or solving a factor graph.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("inconsistent problem: {0}")]
    Inconsistent(String),
    #[error("solver diverged: non-finite cost at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Errors raised while loading a scenario.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("robot model: {0}")]
    Model(#[from] ModelError),
    #[error("unreachable goal: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}
