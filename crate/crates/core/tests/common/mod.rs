#![allow(dead_code)]

use std::path::PathBuf;

use manipgp::ChainModel;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn robot(name: &str) -> ChainModel {
    ChainModel::from_path(repo_root().join("scenarios/robots").join(name)).unwrap()
}

pub fn scenario_path(name: &str) -> PathBuf {
    repo_root().join("scenarios").join(name)
}

/// Rodrigues rotation, built by hand.
fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = Matrix3::new(
        0.0, -axis.z, axis.y, //
        axis.z, 0.0, -axis.x, //
        -axis.y, axis.x, 0.0,
    );
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

fn homogeneous(rot: Matrix3<f64>, t: Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

/// End-effector position by straightforward 4×4 product of transforms.
pub fn brute_force_ee(model: &ChainModel, q: &DVector<f64>) -> Vector3<f64> {
    let mut t = Matrix4::identity();
    for (joint, &angle) in model.joints().iter().zip(q.iter()) {
        let origin = joint.origin.to_homogeneous();
        t = t * origin * homogeneous(axis_angle(&joint.axis, angle), Vector3::zeros());
    }
    t = t * model.tool().to_homogeneous();
    Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)])
}

/// Central-difference derivative of a vector-valued function along joint `j`.
pub fn central_diff<F>(f: F, q: &DVector<f64>, j: usize, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut qp = q.clone();
    let mut qm = q.clone();
    qp[j] += h;
    qm[j] -= h;
    (f(&qp) - f(&qm)) / (2.0 * h)
}

pub fn central_diff_scalar<F>(f: F, q: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    DVector::from_iterator(
        q.len(),
        (0..q.len()).map(|j| {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += h;
            qm[j] -= h;
            (f(&qp) - f(&qm)) / (2.0 * h)
        }),
    )
}

pub fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}
