//! Manipulability-maximizing trajectory planning for serial manipulators.

pub mod baselines;
pub mod benchmark;
pub mod error;
pub mod factors;
pub mod gp;
pub mod gradcheck;
pub mod initialization;
pub mod kinematics;
pub mod linear;
pub mod metrics;
pub mod model;
pub mod scenario;
pub mod solver;
pub mod workspace;

pub use error::{KinematicsError, ModelError, ScenarioError, SolveError, TrajectoryError};
pub use gp::{GpParams, GpTrajectory, SupportState};
pub use kinematics::{ChainFrames, ManipDerivatives, ManipReport};
pub use model::{ChainModel, CollisionSphere, Configuration, RevoluteJoint};
pub use workspace::{Aabb, Obstacle, SdfGrid};
pub use solver::{solve, FactorGraph, SolveReport, SolverOptions};
