mod common;

use common::{enumerate, lq_instance, lqr_error, random_qp};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rampc::dynamics::{InputVector, StateVector};
use rampc::solver::qp::{self, QpData, QpOptions, QpStatus};
use rampc::solver::*;

#[test]
fn rti_step_reproduces_lqr() {
    let err = lqr_error(5, 12);
    assert!(err < 1e-6, "{err:e}");
    let lq = lq_instance(0, 12);
    let warm = SolverState::hold(&StateVector::zeros(), &InputVector::zeros(), 12);
    let out = rti_step(&lq.problem, &StateVector::from_element(0.5), &warm).unwrap();
    assert_eq!(out.state.status, SolveStatus::Success);
    assert!(out.state.kkt_residual < 1e-7);
}

#[test]
fn optimal_warm_start_is_a_fixed_point() {
    let problem = lq_instance(7, 10).problem;
    let x0 = StateVector::from_element(0.3);
    let warm = SolverState::hold(&StateVector::zeros(), &InputVector::zeros(), 10);
    let first = rti_step(&problem, &x0, &warm).unwrap();
    let second = rti_step(&problem, &x0, &first.state).unwrap();
    assert!(second.state.step_norm < 1e-8, "{:e}", second.state.step_norm);
}

#[test]
fn crossed_input_bounds_fail_validation() {
    let mut problem = lq_instance(1, 5).problem;
    problem.input_lower[0] = 1.0;
    problem.input_upper[0] = 0.0;
    let warm = SolverState::hold(&StateVector::zeros(), &InputVector::zeros(), 5);
    assert!(rti_step(&problem, &StateVector::zeros(), &warm).is_err());
}

#[test]
fn input_bounds_are_respected() {
    let mut problem = lq_instance(2, 8).problem;
    problem.input_lower = InputVector::from_element(-0.05);
    problem.input_upper = InputVector::from_element(0.05);
    let warm = SolverState::hold(&StateVector::zeros(), &InputVector::zeros(), 8);
    let out = rti_step(&problem, &StateVector::from_element(2.0), &warm).unwrap();
    for u in &out.state.inputs {
        assert!(u.amax() <= 0.05 + 1e-12);
    }
    assert!(out.state.kkt_residual < 1e-7);
}

#[test]
fn state_bounds_hold_when_feasible() {
    // The exact penalty keeps feasible soft rows satisfied.
    let mut problem = lq_instance(3, 10).problem;
    problem.state_upper[0] = 0.9;
    problem.state_lower[0] = -0.9;
    let warm = SolverState::hold(&StateVector::zeros(), &InputVector::zeros(), 10);
    let mut x0 = StateVector::zeros();
    x0[0] = 0.8;
    x0[8] = 1.0;
    let out = rti_step(&problem, &x0, &warm).unwrap();
    for x in &out.state.states {
        assert!(x[0] <= 0.9 + 1e-9 && x[0] >= -0.9 - 1e-9, "{}", x[0]);
    }
}

#[test]
fn qp_matches_enumeration_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = QpOptions::default();
    for inst in 0..200 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(0..=2);
        let data = random_qp(&mut rng, n, m);
        let sol = qp::solve(&data, None, &opts);
        assert_eq!(sol.status, QpStatus::Optimal, "instance {inst}");
        assert!(sol.kkt_residual < 1e-7, "instance {inst}: KKT {:e}", sol.kkt_residual);
        let (x_ref, f_ref) = enumerate(&data);
        let f = data.objective(&sol.x);
        assert!((f - f_ref).abs() <= 1e-7 * (1.0 + f_ref.abs()), "instance {inst}: {f} vs {f_ref}");
        assert!((&sol.x - &x_ref).amax() < 1e-7, "instance {inst}: {} vs {}", sol.x, x_ref);
    }
}

#[test]
fn one_dimensional_bound() {
    let data = QpData::box_only(
        DMatrix::from_element(1, 1, 1.0),
        DVector::zeros(1),
        DVector::from_element(1, 1.0),
        DVector::from_element(1, f64::INFINITY),
    );
    let sol = qp::solve(&data, None, &QpOptions::default());
    assert!((sol.x[0] - 1.0).abs() < 1e-12);
    assert!((sol.bound_multipliers[0].abs() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kkt_holds_on_every_success(seed in 0u64..10_000, n in 1usize..8, m in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_qp(&mut rng, n, m);
        let sol = qp::solve(&data, None, &QpOptions::default());
        if sol.status == QpStatus::Optimal {
            let r = qp::kkt_residual(&data, &sol.x, &sol.bound_multipliers, &sol.row_multipliers);
            prop_assert!(r < 1e-7);
        }
    }

    #[test]
    fn large_penalty_leaves_feasible_rows_satisfied(seed in 0u64..10_000, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = random_qp(&mut rng, n, 1);
        // Make the row feasible at the box center.
        let center = (&data.lb + &data.ub) * 0.5;
        data.b[0] = data.a.row(0).transpose().dot(&center) + 0.1;
        data.penalty[0] = 1e4;
        let sol = qp::solve(&data, None, &QpOptions::default());
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!(data.a.row(0).transpose().dot(&sol.x) - data.b[0] <= 1e-9);
    }
}
