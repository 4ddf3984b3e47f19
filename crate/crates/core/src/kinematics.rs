//! Forward kinematics, geometric Jacobian and the manipulability index.
//!
//! Jacobian rows are ordered linear `x y z` then angular `x y z`; a model with
//! task dimension `p` keeps the first `p` rows (so `p = 2` is planar `x y`).

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3xX, Matrix6xX, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::KinematicsError;
use crate::model::{ChainModel, Configuration};

/// Singular values below `PINV_RCOND * sigma_max` are dropped from the
/// pseudo-inverse used by the manipulability gradient.
pub const PINV_RCOND: f64 = 1e-8;

/// Safety factor applied to the sampled manipulability maximum.
pub const M_MAX_SAFETY: f64 = 1.05;

/// World-frame quantities of a chain at one configuration.
#[derive(Clone, Debug)]
pub struct ChainFrames {
    /// Pose of each joint's child link, after the joint rotation.
    pub links: Vec<Isometry3<f64>>,
    /// World position of each joint origin.
    pub joint_positions: Vec<Vector3<f64>>,
    /// World direction of each joint axis.
    pub joint_axes: Vec<Vector3<f64>>,
    pub end_effector: Isometry3<f64>,
}

impl ChainFrames {
    pub fn ee_position(&self) -> Vector3<f64> {
        self.end_effector.translation.vector
    }

    /// Full 6×n geometric Jacobian of the end-effector.
    pub fn full_jacobian(&self) -> Matrix6xX<f64> {
        let n = self.joint_axes.len();
        let pe = self.ee_position();
        let mut jac = Matrix6xX::zeros(n);
        for j in 0..n {
            let z = self.joint_axes[j];
            let lin = z.cross(&(pe - self.joint_positions[j]));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, j).copy_from(&z);
        }
        jac
    }

    /// 3×n linear Jacobian of a world point rigidly attached to `link`.
    pub fn point_jacobian(&self, link: usize, point: &Vector3<f64>) -> Matrix3xX<f64> {
        let n = self.joint_axes.len();
        let mut jac = Matrix3xX::zeros(n);
        for j in 0..=link.min(n - 1) {
            let col = self.joint_axes[j].cross(&(point - self.joint_positions[j]));
            jac.set_column(j, &col);
        }
        jac
    }

    /// Derivative of the full Jacobian with respect to joint `k`.
    ///
    /// Column `j` differentiates `[z_j × (p_e − p_j); z_j]`. Joint `k` turns
    /// every frame downstream of it, so for `k < j` both the axis and the
    /// lever arm rotate (`z_k × ·` applied to the column); for `k ≥ j` only
    /// the end-effector moves and the angular part is constant.
    pub fn full_jacobian_partial(&self, full: &Matrix6xX<f64>, k: usize) -> Matrix6xX<f64> {
        let n = self.joint_axes.len();
        let zk = self.joint_axes[k];
        let lin_k: Vector3<f64> = full.fixed_view::<3, 1>(0, k).into_owned();
        let mut d = Matrix6xX::zeros(n);
        for j in 0..n {
            let zj = self.joint_axes[j];
            if k < j {
                let lin_j: Vector3<f64> = full.fixed_view::<3, 1>(0, j).into_owned();
                d.fixed_view_mut::<3, 1>(0, j).copy_from(&zk.cross(&lin_j));
                d.fixed_view_mut::<3, 1>(3, j).copy_from(&zk.cross(&zj));
            } else {
                d.fixed_view_mut::<3, 1>(0, j).copy_from(&zj.cross(&lin_k));
            }
        }
        d
    }
}

/// Manipulability index with the singular values it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct ManipReport {
    pub m: f64,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub smallest_sv: f64,
}

/// Manipulability, its gradient, and the per-joint trace terms
/// `Tr(∂J/∂θⱼ · J†)` shared by the index and the log cost.
#[derive(Clone, Debug)]
pub struct ManipDerivatives {
    pub report: ManipReport,
    pub trace: DVector<f64>,
    pub gradient: DVector<f64>,
}

struct Svd {
    u: DMatrix<f64>,
    v_t: DMatrix<f64>,
    sigma: Vec<f64>,
}

fn sorted_svd(jac: &DMatrix<f64>) -> Svd {
    let svd = jac.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Svd {
        u: u.select_columns(order.iter()),
        v_t: v_t.select_rows(order.iter()),
        sigma: order.iter().map(|&i| svd.singular_values[i]).collect(),
    }
}

/// Singular values at or below round-off of the largest one count as zero,
/// so structurally rank-deficient Jacobians give exactly `m = 0`.
fn rank_cutoff(sigma_max: f64, rows: usize, cols: usize) -> f64 {
    sigma_max * rows.max(cols) as f64 * f64::EPSILON * 4.0
}

fn report_from(svd: &Svd, rows: usize, cols: usize) -> ManipReport {
    let sigma_max = svd.sigma.first().copied().unwrap_or(0.0);
    let cutoff = rank_cutoff(sigma_max, rows, cols);
    let singular_values: Vec<f64> = svd
        .sigma
        .iter()
        .map(|&s| if s <= cutoff { 0.0 } else { s })
        .collect();
    let m = singular_values.iter().product::<f64>();
    let smallest_sv = singular_values.last().copied().unwrap_or(0.0);
    ManipReport {
        m,
        singular_values,
        smallest_sv,
    }
}

/// J† = Σ vᵢ uᵢᵀ / σᵢ over singular values at least `PINV_RCOND·σ_max`.
fn pinv_from(svd: &Svd, rows: usize, cols: usize) -> DMatrix<f64> {
    let sigma_max = svd.sigma.first().copied().unwrap_or(0.0);
    let keep = PINV_RCOND * sigma_max;
    let mut pinv = DMatrix::zeros(cols, rows);
    if sigma_max > 0.0 {
        for (i, &s) in svd.sigma.iter().enumerate() {
            if s < keep {
                continue;
            }
            let v = svd.v_t.row(i).transpose();
            let u = svd.u.column(i);
            pinv += (v * u.transpose()) / s;
        }
    }
    pinv
}

/// Truncated pseudo-inverse: singular values below `PINV_RCOND·σ_max` are
/// dropped.
pub fn pseudo_inverse(jac: &DMatrix<f64>) -> DMatrix<f64> {
    pinv_from(&sorted_svd(jac), jac.nrows(), jac.ncols())
}

impl ChainModel {
    fn check_config(&self, q: &Configuration) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::Dimension {
                expected: self.dof(),
                got: q.len(),
            });
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        Ok(())
    }

    pub fn forward_kinematics(&self, q: &Configuration) -> Result<ChainFrames, KinematicsError> {
        self.check_config(q)?;
        let n = self.dof();
        let mut links = Vec::with_capacity(n);
        let mut joint_positions = Vec::with_capacity(n);
        let mut joint_axes = Vec::with_capacity(n);
        let mut pose = Isometry3::identity();
        for (joint, &angle) in self.joints().iter().zip(q.iter()) {
            let frame = pose * joint.origin;
            let axis = nalgebra::Unit::new_unchecked(joint.axis);
            joint_positions.push(frame.translation.vector);
            joint_axes.push(frame.rotation * joint.axis);
            pose = frame * nalgebra::UnitQuaternion::from_axis_angle(&axis, angle);
            links.push(pose);
        }
        let end_effector = pose * self.tool();
        Ok(ChainFrames {
            links,
            joint_positions,
            joint_axes,
            end_effector,
        })
    }

    pub fn ee_position(&self, q: &Configuration) -> Result<Vector3<f64>, KinematicsError> {
        Ok(self.forward_kinematics(q)?.ee_position())
    }

    /// Task-space Jacobian (p×n).
    pub fn jacobian(&self, q: &Configuration) -> Result<DMatrix<f64>, KinematicsError> {
        let frames = self.forward_kinematics(q)?;
        Ok(self.task_rows(&frames.full_jacobian()))
    }

    /// Analytic `∂J/∂θⱼ` of the task-space Jacobian.
    pub fn jacobian_partial(
        &self,
        q: &Configuration,
        joint: usize,
    ) -> Result<DMatrix<f64>, KinematicsError> {
        if joint >= self.dof() {
            return Err(KinematicsError::JointIndex {
                index: joint,
                joints: self.dof(),
            });
        }
        let frames = self.forward_kinematics(q)?;
        let full = frames.full_jacobian();
        Ok(self.task_rows(&frames.full_jacobian_partial(&full, joint)))
    }

    fn task_rows(&self, full: &Matrix6xX<f64>) -> DMatrix<f64> {
        let p = self.task_dim();
        DMatrix::from_fn(p, full.ncols(), |r, c| full[(r, c)])
    }

    /// End-effector position and its Jacobian, restricted to the first
    /// `min(p, 3)` task coordinates.
    pub fn position_task(&self, q: &Configuration) -> Result<(DVector<f64>, DMatrix<f64>), KinematicsError> {
        let frames = self.forward_kinematics(q)?;
        let full = frames.full_jacobian();
        let rows = self.task_dim().min(3);
        let pos = frames.ee_position();
        Ok((
            DVector::from_fn(rows, |r, _| pos[r]),
            DMatrix::from_fn(rows, full.ncols(), |r, c| full[(r, c)]),
        ))
    }

    /// `m = sqrt(det(J Jᵀ))`, computed as the product of singular values.
    pub fn manipulability(&self, q: &Configuration) -> Result<ManipReport, KinematicsError> {
        let jac = self.jacobian(q)?;
        Ok(report_from(&sorted_svd(&jac), jac.nrows(), jac.ncols()))
    }

    pub fn manipulability_gradient(
        &self,
        q: &Configuration,
    ) -> Result<DVector<f64>, KinematicsError> {
        Ok(self.manipulability_derivatives(q)?.gradient)
    }

    /// Gradient entry `j` is `m · Tr(∂J/∂θⱼ · J†)` with a truncated
    /// pseudo-inverse; at `m = 0` the gradient is exactly zero.
    pub fn manipulability_derivatives(
        &self,
        q: &Configuration,
    ) -> Result<ManipDerivatives, KinematicsError> {
        let frames = self.forward_kinematics(q)?;
        let full = frames.full_jacobian();
        let jac = self.task_rows(&full);
        let (p, n) = jac.shape();
        let svd = sorted_svd(&jac);
        let report = report_from(&svd, p, n);

        let pinv_t = pinv_from(&svd, p, n).transpose();
        let mut trace = DVector::zeros(n);
        for k in 0..n {
            let d = self.task_rows(&frames.full_jacobian_partial(&full, k));
            trace[k] = d.component_mul(&pinv_t).sum();
        }
        let gradient = &trace * report.m;
        Ok(ManipDerivatives {
            report,
            trace,
            gradient,
        })
    }

    /// Uniform random configuration within joint limits.
    pub fn sample_configuration<R: Rng>(&self, rng: &mut R) -> Configuration {
        DVector::from_iterator(
            self.dof(),
            self.joints().iter().map(|j| rng.random_range(j.lower..j.upper)),
        )
    }

    /// Largest manipulability over `samples` uniform in-limit configurations,
    /// times [`M_MAX_SAFETY`]. Deterministic for a given seed.
    pub fn estimate_m_max(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = 0.0_f64;
        for _ in 0..samples.max(1) {
            let q = self.sample_configuration(&mut rng);
            let m = self
                .manipulability(&q)
                .map(|r| r.m)
                .expect("sampled configuration has model dimension");
            best = best.max(m);
        }
        best * M_MAX_SAFETY
    }

    /// Returns a copy with `m_max` estimated and cached if it is not set.
    pub fn ensure_m_max(self, samples: usize, seed: u64) -> Self {
        if self.m_max().is_some() {
            return self;
        }
        let m = self.estimate_m_max(samples, seed);
        self.with_m_max(m)
    }
}
