use nalgebra::DMatrix;
use proptest::prelude::*;
use rampc::dynamics::{HookModel, InputVector, ModelParams, StateVector};
use rampc::estimator::*;
use rampc::phases::Phase;
use rampc::zoro::UncertaintyConfig;
use statrs::function::erf::erf_inv;

#[test]
fn two_dof_quantile_is_exact() {
    let alpha = 1.0 - (-1.0f64).exp();
    assert!((chi2_inv(2, alpha).unwrap() - 2.0).abs() < 1e-10);
}

#[test]
fn one_dof_95_percent_quantile() {
    let x = chi2_inv(1, 0.95).unwrap();
    assert!((x - 3.841458821).abs() < 1e-8, "{x}");
    // One degree of freedom: P(X <= x) = erf(sqrt(x / 2)).
    let oracle = 2.0 * erf_inv(0.95).powi(2);
    assert!((x - oracle).abs() < 1e-8, "{x} vs {oracle}");
}

#[test]
fn bound_covariance_round_trip() {
    let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    for alpha in [0.5, 0.9, 0.95, 0.99] {
        let back = cov_to_bound(&bound_to_cov(&w, 2, alpha).unwrap(), 2, alpha).unwrap();
        assert!((back - &w).amax() < 1e-12);
    }
}

#[test]
fn invalid_quantile_arguments() {
    assert!(chi2_inv(0, 0.5).is_err());
    assert!(chi2_inv(3, 0.0).is_err());
    assert!(chi2_inv(3, 1.0).is_err());
    assert!(chi2_inv(3, f64::NAN).is_err());
}

proptest! {
    #[test]
    fn quantile_inverts_the_cdf(dof in 1usize..40, alpha in 0.01f64..0.999) {
        let x = chi2_inv(dof, alpha).unwrap();
        prop_assert!((chi2_cdf(dof, x) - alpha).abs() < 1e-10);
    }

    #[test]
    fn quantile_is_monotone(dof in 1usize..20, a in 0.01f64..0.98, d in 0.001f64..0.01) {
        prop_assert!(chi2_inv(dof, a + d).unwrap() > chi2_inv(dof, a).unwrap());
    }
}

fn hover_sequence(model: &HookModel, true_mass: f64, steps: usize) -> Vec<(StateVector, InputVector, StateVector)> {
    // Hover input sized for a lighter payload, so the true mass drags the
    // quad down and the mass becomes observable.
    let u = model.hover_input(0.05);
    let mut x = StateVector::zeros();
    x[2] = 1.0;
    let mut out = Vec::new();
    for _ in 0..steps {
        let next = model.rk4(&x, &u, true_mass, 0.05).unwrap();
        out.push((x, u, next));
        x = next;
    }
    out
}

#[test]
fn ekf_converges_on_noise_free_data() {
    let model = HookModel::new(ModelParams::default()).unwrap();
    let unc = UncertaintyConfig::default();
    let mut ekf = EkfState::new(0.05, &EkfConfig::default(), &unc).unwrap();
    for (xp, u, xm) in hover_sequence(&model, 0.15, 20) {
        ekf = ekf_step(&ekf, &model, &xp, &u, &xm, Phase::Transport, 0.05).unwrap();
    }
    assert!((ekf.mass() - 0.15).abs() < 0.0075, "{}", ekf.mass());
    assert!(ekf.p[(0, 0)] < EkfConfig::default().p0);
}

#[test]
fn ekf_is_idle_without_payload() {
    let model = HookModel::new(ModelParams::default()).unwrap();
    let unc = UncertaintyConfig::default();
    let ekf = EkfState::new(0.05, &EkfConfig::default(), &unc).unwrap();
    let (xp, u, xm) = hover_sequence(&model, 0.15, 1)[0];
    for phase in [Phase::Approach, Phase::PickUp, Phase::Unhook] {
        let next = ekf_step(&ekf, &model, &xp, &u, &xm, phase, 0.05).unwrap();
        assert_eq!(next.theta, ekf.theta);
        assert_eq!(next.p, ekf.p);
        assert!(!next.active);
        assert_eq!(sync_to_zoro(&next, &unc).unwrap(), unc);
    }
}

#[test]
fn synced_bound_scales_the_covariance() {
    let model = HookModel::new(ModelParams::default()).unwrap();
    let unc = UncertaintyConfig::default();
    let ekf = EkfState::new(0.05, &EkfConfig::default(), &unc).unwrap();
    let (xp, u, xm) = hover_sequence(&model, 0.15, 1)[0];
    let next = ekf_step(&ekf, &model, &xp, &u, &xm, Phase::Transport, 0.05).unwrap();
    let synced = sync_to_zoro(&next, &unc).unwrap();
    let expected = next.p[(0, 0)] * chi2_inv(1, unc.alpha).unwrap();
    assert!((synced.w_theta[0] - expected).abs() < 1e-15);
}

#[test]
fn negative_variances_are_rejected() {
    let cfg = EkfConfig {
        q: -1.0,
        ..EkfConfig::default()
    };
    assert!(EkfState::new(0.05, &cfg, &UncertaintyConfig::default()).is_err());
}
