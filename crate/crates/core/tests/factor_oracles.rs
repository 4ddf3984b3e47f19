mod common;

use common::*;
use manipgp::factors::{
    collision_cost, collision_term, goal_term, manip_cost, manip_factor_residual, CollisionFactorParams, Linearized,
    ManipFactorParams, Site,
};
use manipgp::gp::InterpBasis;
use manipgp::{Aabb, ChainModel, GpParams, Obstacle, SdfGrid, SupportState};
use nalgebra::{dvector, DMatrix, DVector, Vector3};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        rng_seed: RngSeed::Fixed(17),
        ..ProptestConfig::default()
    }
}

fn joint_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0f64..3.0, n)
}

/// Central differences of a whitened residual with respect to the stacked
/// states it touches, laid out like `Linearized::blocks`.
fn fd_blocks<F>(states: &[SupportState], indices: &[usize], f: F) -> Vec<DMatrix<f64>>
where
    F: Fn(&[SupportState]) -> DVector<f64>,
{
    indices
        .iter()
        .map(|&i| {
            let x = states[i].stacked();
            let rows = f(states).len();
            let mut out = DMatrix::zeros(rows, x.len());
            for c in 0..x.len() {
                let mut plus = states.to_vec();
                let mut minus = states.to_vec();
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += H;
                xm[c] -= H;
                plus[i] = SupportState::from_stacked(&xp, states[i].time);
                minus[i] = SupportState::from_stacked(&xm, states[i].time);
                out.set_column(c, &((f(&plus) - f(&minus)) / (2.0 * H)));
            }
            out
        })
        .collect()
}

fn block_rel_err(lin: &Linearized, fd: &[DMatrix<f64>]) -> f64 {
    let analytic: Vec<f64> = lin.blocks.iter().flat_map(|(_, b)| b.iter().copied().collect::<Vec<_>>()).collect();
    let numeric: Vec<f64> = fd.iter().flat_map(|b| b.iter().copied().collect::<Vec<_>>()).collect();
    rel_err(&DVector::from_vec(analytic), &DVector::from_vec(numeric), 1e-8)
}

fn two_states(q0: &[f64], v0: &[f64], q1: &[f64], v1: &[f64], dt: f64) -> Vec<SupportState> {
    vec![
        SupportState::new(DVector::from_column_slice(q0), DVector::from_column_slice(v0), 0.0),
        SupportState::new(DVector::from_column_slice(q1), DVector::from_column_slice(v1), dt),
    ]
}

fn ur10_with_table() -> (ChainModel, SdfGrid) {
    let model = robot("ur10.json");
    let table = Obstacle::Box {
        center: [0.6, 0.0, 0.3],
        half_extents: [0.3, 0.4, 0.3],
    };
    let bounds = Aabb {
        min: [-1.8, -1.8, -1.2],
        max: [1.8, 1.8, 1.9],
    };
    let sdf = SdfGrid::build(&[table], bounds, 0.05).unwrap();
    (model, sdf)
}

#[test]
fn manip_cost_at_zero_manipulability() {
    let params = ManipFactorParams::new(1.0, 0.01, 1.0).unwrap();
    assert!((params.cost_from_m(0.0) - 101f64.ln()).abs() < 1e-12);
    assert_eq!(params.cost_from_m(1.0), 0.0);
}

#[test]
fn interpolated_jacobian_wrt_next_state_vanishes_at_interval_start() {
    let model = ChainModel::planar(&[1.0, 1.0]).unwrap();
    let gp = GpParams::isotropic(2, 1.0, 1.0, 2).unwrap();
    let params = ManipFactorParams::with_default_c(1.0, 1.05).unwrap();
    let states = two_states(&[0.2, 0.9], &[0.1, -0.3], &[0.7, 1.3], &[0.2, 0.4], 1.0);
    let mut norms = Vec::new();
    for offset in [1e-2, 1e-4, 1e-6] {
        let basis = InterpBasis::new(&gp, offset).unwrap();
        let lin = manip_factor_residual(&model, &states, Site::Interpolated { interval: 0, offset }, Some(&basis), &params)
            .unwrap();
        let next = lin.blocks.iter().find(|(i, _)| *i == 1).map(|(_, b)| b.amax()).unwrap();
        norms.push(next);
    }
    assert!(norms[2] < 1e-10, "{norms:?}");
    assert!(norms[0] > norms[1] && norms[1] > norms[2]);
}

#[test]
fn manip_cost_invariant_to_base_joint_on_two_r() {
    let model = ChainModel::planar(&[1.0, 0.6]).unwrap();
    let params = ManipFactorParams::with_default_c(1.0, 0.63).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let t2: f64 = rng.random_range(-3.0..3.0);
        let a = manip_cost(&model, &dvector![rng.random_range(-3.0..3.0), t2], &params).unwrap();
        let b = manip_cost(&model, &dvector![rng.random_range(-3.0..3.0), t2], &params).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn collision_cost_does_not_increase_along_field_gradient() {
    let (_, sdf) = ur10_with_table();
    let eps = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 500 {
        let p = Vector3::new(rng.random_range(-0.5..1.5), rng.random_range(-1.0..1.0), rng.random_range(-0.3..1.2));
        let s = sdf.query(&p);
        if !s.in_bounds || s.gradient.norm() == 0.0 {
            continue;
        }
        let hinge = |d: f64| (eps - d + 0.05).max(0.0);
        let step = sdf.query(&(p + s.gradient * 1e-3));
        assert!(hinge(step.distance) <= hinge(s.distance) + 1e-12, "at {p:?}");
        checked += 1;
    }
}

#[test]
fn sdf_matches_analytic_distance_on_random_points() {
    let obstacles = vec![
        Obstacle::Sphere {
            center: [0.3, -0.2, 0.5],
            radius: 0.25,
        },
        Obstacle::Box {
            center: [-0.4, 0.3, 0.1],
            half_extents: [0.2, 0.3, 0.1],
        },
    ];
    let bounds = Aabb {
        min: [-1.0; 3],
        max: [1.0; 3],
    };
    let cell = 0.02;
    let sdf = SdfGrid::build(&obstacles, bounds, cell).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = Vector3::new(rng.random_range(-0.95..0.95), rng.random_range(-0.95..0.95), rng.random_range(-0.95..0.95));
        let exact = obstacles.iter().map(|o| o.signed_distance(&p)).fold(f64::INFINITY, f64::min);
        worst = worst.max((sdf.query(&p).distance - exact).abs());
    }
    assert!(worst < cell, "max error {worst}");
}

#[test]
fn sphere_field_is_symmetric_under_reflection() {
    let c = Vector3::new(0.1, 0.05, -0.1);
    let cell = 0.04;
    let sdf = SdfGrid::build(
        &[Obstacle::Sphere {
            center: c.into(),
            radius: 0.3,
        }],
        Aabb {
            min: [-1.0; 3],
            max: [1.0; 3],
        },
        cell,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let d = Vector3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8));
        let a = sdf.query(&(c + d)).distance;
        let b = sdf.query(&(c - d)).distance;
        assert!((a - b).abs() < cell, "{a} vs {b}");
    }
}

#[test]
fn halving_cell_size_reduces_error() {
    let obstacles = [Obstacle::Sphere {
        center: [0.0, 0.0, 0.0],
        radius: 0.4,
    }];
    let bounds = Aabb {
        min: [-1.0; 3],
        max: [1.0; 3],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points: Vec<Vector3<f64>> = (0..1000)
        .map(|_| Vector3::new(rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)))
        .collect();
    let errors: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&cell| {
            let sdf = SdfGrid::build(&obstacles, bounds, cell).unwrap();
            points
                .iter()
                .map(|p| (sdf.query(p).distance - obstacles[0].signed_distance(p)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(errors[1] < errors[0] && errors[2] < errors[1], "{errors:?}");
}

proptest! {
    #![proptest_config(config(50))]

    #[test]
    fn support_manip_factor_matches_fd(q in joint_vec(6)) {
        let model = robot("ur10.json");
        let q = DVector::from_vec(q);
        prop_assume!(model.manipulability(&q).unwrap().smallest_sv > 1e-2);
        let params = ManipFactorParams::with_default_c(1e-4, 0.5).unwrap();
        let states = vec![SupportState::new(q.clone(), DVector::zeros(6), 0.0)];
        let lin = manip_factor_residual(&model, &states, Site::Support(0), None, &params).unwrap();
        let fd = fd_blocks(&states, &[0], |s| {
            manip_factor_residual(&model, s, Site::Support(0), None, &params).unwrap().residual
        });
        prop_assert!(block_rel_err(&lin, &fd) < 1e-4);
    }

    #[test]
    fn interpolated_manip_factor_matches_fd(
        q0 in joint_vec(6), q1 in joint_vec(6), v0 in joint_vec(6), v1 in joint_vec(6), frac in 0.05f64..0.95,
    ) {
        let model = robot("ur10.json");
        let gp = GpParams::isotropic(6, 1e5, 10.0, 11).unwrap();
        let dt = gp.dt();
        let offset = frac * dt;
        let basis = InterpBasis::new(&gp, offset).unwrap();
        let states = two_states(&q0, &v0, &q1, &v1, dt);
        let q = &basis.lambda_position() * states[0].stacked() + &basis.psi_position() * states[1].stacked();
        prop_assume!(model.manipulability(&q).unwrap().smallest_sv > 1e-2);
        let params = ManipFactorParams::with_default_c(1e-4, 0.5).unwrap();
        let site = Site::Interpolated { interval: 0, offset };
        let lin = manip_factor_residual(&model, &states, site, Some(&basis), &params).unwrap();
        let fd = fd_blocks(&states, &[0, 1], |s| {
            manip_factor_residual(&model, s, site, Some(&basis), &params).unwrap().residual
        });
        prop_assert!(block_rel_err(&lin, &fd) < 1e-4);
    }

    #[test]
    fn goal_factor_matches_fd(q in joint_vec(6), gx in -1.0f64..1.0, gy in -1.0f64..1.0, gz in 0.0f64..1.0) {
        let model = robot("ur10.json");
        let q = DVector::from_vec(q);
        let goal = Vector3::new(gx, gy, gz);
        let term = goal_term(&model, &q, &goal, 1e-4).unwrap();
        let mut fd = DMatrix::zeros(3, 6);
        for j in 0..6 {
            fd.set_column(j, &central_diff(|x| goal_term(&model, x, &goal, 1e-4).unwrap().residual, &q, j, H));
        }
        prop_assert!(rel_err(&flatten(&term.jacobian), &flatten(&fd), 1e-8) < 1e-4);
    }

    #[test]
    fn collision_factor_matches_fd(q in joint_vec(6)) {
        let (model, sdf) = ur10_with_table();
        let q = DVector::from_vec(q);
        let params = CollisionFactorParams::new(1e2, 0.3).unwrap();
        let eval = collision_cost(&model, &sdf, &q, params.eps).unwrap();
        prop_assume!(!eval.out_of_bounds && eval.costs.iter().any(|c| *c > 1e-3));
        prop_assume!(eval.costs.iter().all(|c| *c == 0.0 || *c > 1e-3));
        let term = collision_term(&model, &sdf, &q, &params).unwrap();
        let mut fd = DMatrix::zeros(term.residual.len(), 6);
        for j in 0..6 {
            fd.set_column(j, &central_diff(|x| collision_term(&model, &sdf, x, &params).unwrap().residual, &q, j, H));
        }
        prop_assert!(rel_err(&flatten(&term.jacobian), &flatten(&fd), 1e-8) < 1e-4);
    }

    #[test]
    fn whitening_scales_cost_only(q in joint_vec(2), k in 0.1f64..10.0) {
        let model = ChainModel::planar(&[1.0, 1.0]).unwrap();
        let q = DVector::from_vec(q);
        let goal = Vector3::new(0.5, 0.5, 0.0);
        let a = goal_term(&model, &q, &goal, 0.3).unwrap();
        let b = goal_term(&model, &q, &goal, 0.3 * k * k).unwrap();
        let ca = a.residual.norm_squared();
        let cb = b.residual.norm_squared();
        prop_assert!((cb - ca / (k * k)).abs() <= 1e-10 * ca.max(1.0));
    }
}
