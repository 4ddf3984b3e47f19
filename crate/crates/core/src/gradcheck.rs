//! Finite-difference audit of every analytic derivative used by the planner.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::KinematicsError;
use crate::factors::{collision_cost, goal_position_residual, manip_cost, manip_cost_gradient, ManipFactorParams};
use crate::model::{ChainModel, Configuration};
use crate::workspace::{Aabb, Obstacle, SdfGrid};

pub const PASS_TOL: f64 = 1e-4;

/// Central-difference step, radians.
const FD_STEP: f64 = 1e-6;

/// Samples are redrawn until the smallest singular value exceeds this.
const MIN_SINGULAR_VALUE: f64 = 1e-2;

/// Margin used for the collision check so that most spheres are active.
const COLLISION_EPS: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Configuration where the largest error occurred.
    pub worst: Vec<f64>,
    pub evaluated: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub samples: usize,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

/// `‖a − b‖∞ / max(‖b‖∞, floor)`.
fn rel_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-8)
}

fn fd_matrix<F>(q: &Configuration, rows: usize, f: F) -> Result<DMatrix<f64>, KinematicsError>
where
    F: Fn(&Configuration) -> Result<DVector<f64>, KinematicsError>,
{
    let n = q.len();
    let mut out = DMatrix::zeros(rows, n);
    for j in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[j] += FD_STEP;
        qm[j] -= FD_STEP;
        let d = (f(&qp)? - f(&qm)?) / (2.0 * FD_STEP);
        out.set_column(j, &d);
    }
    Ok(out)
}

struct Tracker {
    name: &'static str,
    max: f64,
    worst: Vec<f64>,
    evaluated: usize,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            max: 0.0,
            worst: Vec::new(),
            evaluated: 0,
        }
    }

    fn record(&mut self, err: f64, q: &Configuration) {
        self.evaluated += 1;
        if err > self.max || self.worst.is_empty() {
            self.max = self.max.max(err);
            self.worst = q.iter().copied().collect();
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.into(),
            max_rel_error: self.max,
            worst: self.worst,
            evaluated: self.evaluated,
            passed: self.max < PASS_TOL,
        }
    }
}

/// Orientation of the end-effector as a rotation vector relative to `base`.
fn relative_rotation(model: &ChainModel, q: &Configuration, base: &UnitQuaternion<f64>) -> Result<Vector3<f64>, KinematicsError> {
    let r = model.forward_kinematics(q)?.end_effector.rotation;
    Ok((r * base.inverse()).scaled_axis())
}

fn sample_regular(model: &ChainModel, rng: &mut ChaCha8Rng) -> Result<Configuration, KinematicsError> {
    loop {
        let q = model.sample_configuration(rng);
        if model.manipulability(&q)?.smallest_sv > MIN_SINGULAR_VALUE {
            return Ok(q);
        }
    }
}

/// SDF with a few spheres scattered through the reachable workspace.
fn collision_field(model: &ChainModel, rng: &mut ChaCha8Rng) -> Result<Option<SdfGrid>, KinematicsError> {
    if model.spheres().is_empty() {
        return Ok(None);
    }
    let mut reach: f64 = 0.0;
    for _ in 0..200 {
        let q = model.sample_configuration(rng);
        reach = reach.max(model.ee_position(&q)?.norm());
    }
    let obstacles: Vec<Obstacle> = (0..4)
        .map(|_| {
            let q = model.sample_configuration(rng);
            model.ee_position(&q).map(|p| Obstacle::Sphere {
                center: (p * 0.6).into(),
                radius: 0.1 + 0.1 * rng.random::<f64>(),
            })
        })
        .collect::<Result<_, _>>()?;
    let half = reach + 0.5;
    let bounds = Aabb {
        min: [-half; 3],
        max: [half; 3],
    };
    let sdf = SdfGrid::build(&obstacles, bounds, half / 40.0).expect("valid bounds");
    Ok(Some(sdf))
}

/// Compares analytic derivatives with central differences on `samples`
/// random well-conditioned configurations.
pub fn gradcheck(model: &ChainModel, samples: usize, seed: u64) -> Result<GradcheckReport, KinematicsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m_max = model.m_max().unwrap_or_else(|| model.estimate_m_max(2000, seed));
    let params = ManipFactorParams::with_default_c(1.0, m_max).expect("positive m_max");
    let field = collision_field(model, &mut rng)?;

    let mut jac_check = Tracker::new("jacobian");
    let mut m_check = Tracker::new("manipulability_gradient");
    let mut h_check = Tracker::new("manip_cost_gradient");
    let mut goal_check = Tracker::new("goal_factor");
    let mut coll_check = Tracker::new("collision_factor");

    for _ in 0..samples {
        let q = sample_regular(model, &mut rng)?;
        let n = q.len();

        let frames = model.forward_kinematics(&q)?;
        let full = frames.full_jacobian();
        let analytic = DMatrix::from_fn(6, n, |r, c| full[(r, c)]);
        let base = frames.end_effector.rotation;
        let lin = fd_matrix(&q, 3, |x| Ok(DVector::from_column_slice(model.ee_position(x)?.as_slice())))?;
        let ang = fd_matrix(&q, 3, |x| Ok(DVector::from_column_slice(relative_rotation(model, x, &base)?.as_slice())))?;
        let mut numeric = DMatrix::zeros(6, n);
        numeric.rows_mut(0, 3).copy_from(&lin);
        numeric.rows_mut(3, 3).copy_from(&ang);
        jac_check.record(rel_error(&analytic, &numeric), &q);

        let grad_m = model.manipulability_gradient(&q)?;
        let fd_m = fd_matrix(&q, 1, |x| Ok(DVector::from_element(1, model.manipulability(x)?.m)))?;
        m_check.record(rel_error(&DMatrix::from_row_slice(1, n, grad_m.as_slice()), &fd_m), &q);

        let grad_h = manip_cost_gradient(model, &q, &params)?;
        let fd_h = fd_matrix(&q, 1, |x| Ok(DVector::from_element(1, manip_cost(model, x, &params)?)))?;
        h_check.record(rel_error(&DMatrix::from_row_slice(1, n, grad_h.as_slice()), &fd_h), &q);

        let goal = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        let (_, jg) = goal_position_residual(model, &q, &goal)?;
        let fd_g = fd_matrix(&q, 3, |x| {
            let (r, _) = goal_position_residual(model, x, &goal)?;
            Ok(DVector::from_column_slice(r.as_slice()))
        })?;
        let jg = DMatrix::from_column_slice(3, n, jg.as_slice());
        goal_check.record(rel_error(&jg, &fd_g), &q);

        if let Some(sdf) = &field {
            let eval = collision_cost(model, sdf, &q, COLLISION_EPS)?;
            if eval.costs.iter().any(|c| *c > 0.0) && !eval.out_of_bounds {
                let rows = eval.costs.len();
                let fd_c = fd_matrix(&q, rows, |x| Ok(collision_cost(model, sdf, x, COLLISION_EPS)?.costs))?;
                coll_check.record(rel_error(&eval.jacobian, &fd_c), &q);
            }
        }
    }

    let mut checks = vec![
        jac_check.finish(),
        m_check.finish(),
        h_check.finish(),
        goal_check.finish(),
    ];
    if field.is_some() {
        checks.push(coll_check.finish());
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(GradcheckReport {
        samples,
        seed,
        checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_chain_passes() {
        let model = ChainModel::planar(&[1.0, 1.0]).unwrap();
        let report = gradcheck(&model, 100, 3).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checks.len(), 4);
        assert!(report.checks.iter().all(|c| c.evaluated == 100));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let model = ChainModel::planar(&[1.0, 0.7, 0.4]).unwrap();
        assert_eq!(gradcheck(&model, 20, 9).unwrap(), gradcheck(&model, 20, 9).unwrap());
    }

    #[test]
    fn arm_with_spheres_passes() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/robots/ur10.json");
        let model = ChainModel::from_path(path).unwrap();
        let report = gradcheck(&model, 30, 1).unwrap();
        assert_eq!(report.checks.len(), 5);
        assert!(report.checks[4].evaluated > 0);
        assert!(report.passed, "{report:#?}");
    }
}
