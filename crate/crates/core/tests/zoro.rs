mod common;

use common::containment_fractions;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rampc::dynamics::{StateMatrix, StateVector, NX};
use rampc::solver::Linearization;
use rampc::zoro::*;

#[test]
fn sqrt_five_backoff() {
    let g = DVector::from_vec(vec![1.0, 2.0]);
    let s = Ellipsoid::scaled_identity(2, 1.0).unwrap();
    assert!((backoff(&g, &s).unwrap() - 5f64.sqrt()).abs() < 1e-12);

    let s = Ellipsoid::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.75])).unwrap();
    let g = DVector::from_vec(vec![2.0, -1.0]);
    // 2*2*1 + 2*2*(-1)*0.5 + 1*0.75 = 4 - 2 + 0.75 = 2.75
    assert!((backoff(&g, &s).unwrap() - 2.75f64.sqrt()).abs() < 1e-12);
}

#[test]
fn propagation_matches_matrix_arithmetic() {
    let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, -0.2, 0.8, 0.3, 0.0, 0.1, 1.1]);
    let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, 2.0]);
    let w = DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]);
    let s0 = Ellipsoid::new(DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.2, 0.3]))).unwrap();
    let s1 = propagate(&s0, &w, &a, &g).unwrap();
    let direct = &a * s0.shape() * a.transpose() + &g * &w * g.transpose();
    assert!((s1.shape() - direct).amax() < 1e-15);
    assert_eq!(s1.shape(), &s1.shape().transpose());
}

#[test]
fn monte_carlo_containment_on_linear_system() {
    let alpha = 0.95;
    for (k, frac) in containment_fractions(alpha, 100_000, 15, 42).iter().enumerate() {
        assert!(*frac >= alpha - 0.02, "stage {k}: containment {frac}");
    }
}

#[test]
fn trajectory_propagation_matches_recursion() {
    let cfg = UncertaintyConfig::default();
    let mut lins = Vec::new();
    for i in 0..4 {
        let mut a = StateMatrix::identity();
        a[(0, 8)] = 0.05;
        a[(1, 9)] = 0.05 * (i + 1) as f64;
        let mut param = StateVector::zeros();
        param[10] = -0.3;
        lins.push(Linearization {
            next: StateVector::zeros(),
            a,
            b: Default::default(),
            param,
        });
    }
    let sig = propagate_trajectory(&lins, &cfg);
    assert_eq!(sig.len(), 5);
    let w = StateMatrix::from_diagonal(&StateVector::from_column_slice(&cfg.w_w));
    let mut s = StateMatrix::from_diagonal(&StateVector::from_column_slice(&cfg.sigma_bar));
    for (k, lin) in lins.iter().enumerate() {
        s = lin.a * s * lin.a.transpose() + w + lin.param * lin.param.transpose() * cfg.w_theta[0];
        assert!((sig[k + 1] - s).amax() < 1e-15);
    }
}

#[test]
fn zero_uncertainty_gives_zero_propagation() {
    let lins = vec![
        Linearization {
            next: StateVector::zeros(),
            a: StateMatrix::identity() * 1.1,
            b: Default::default(),
            param: StateVector::from_element(0.2),
        };
        5
    ];
    for s in propagate_trajectory(&lins, &UncertaintyConfig::zero()) {
        assert_eq!(s, StateMatrix::zeros());
    }
}

#[test]
fn containment_uses_the_range_for_degenerate_shapes() {
    let mut shape = DMatrix::zeros(NX, NX);
    shape[(8, 8)] = 1e-6;
    let e = Ellipsoid::new(shape).unwrap();
    let mut x = DVector::zeros(NX);
    x[8] = 5e-4;
    assert!(e.contains(&x));
    x[0] = 1e-6;
    assert!(!e.contains(&x));
}

proptest! {
    #[test]
    fn backoff_is_nonnegative_and_homogeneous(
        diag in proptest::collection::vec(0.0f64..2.0, 4),
        grad in proptest::collection::vec(-3.0f64..3.0, 4),
        scale in 0.0f64..5.0,
    ) {
        let s = Ellipsoid::new(DMatrix::from_diagonal(&DVector::from_vec(diag))).unwrap();
        let g = DVector::from_vec(grad);
        let b = backoff(&g, &s).unwrap();
        prop_assert!(b >= 0.0);
        let bs = backoff(&(&g * scale), &s).unwrap();
        prop_assert!((bs - scale * b).abs() <= 1e-12 * (1.0 + bs));
    }

    #[test]
    fn propagation_stays_symmetric_psd(
        entries in proptest::collection::vec(-1.0f64..1.0, 9),
        w in proptest::collection::vec(0.0f64..1.0, 3),
    ) {
        let a = DMatrix::from_row_slice(3, 3, &entries);
        let s = Ellipsoid::scaled_identity(3, 0.5).unwrap();
        let next = propagate(&s, &DMatrix::from_diagonal(&DVector::from_vec(w)), &a, &DMatrix::identity(3, 3)).unwrap();
        prop_assert_eq!(next.shape(), &next.shape().transpose());
        let min = next.shape().clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-12);
    }
}
