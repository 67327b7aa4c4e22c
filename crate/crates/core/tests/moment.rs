mod common;

use common::{ising, random_model, Enumeration};
use proptest::prelude::*;
use rcc_core::chain::DEFAULT_STATE_CAP;
use rcc_core::error::RccError;
use rcc_core::lattice::{block_chain, row_chain};
use rcc_core::model::{ComponentVector, LatticeModel, LatticeShape};
use rcc_core::moment::{
    check_hull, empirical_moment, evaluate, fit, objective, objective_gradient, uniform_moment, FitOptions, FitResult,
    OBJECTIVE_NOISE,
};
use rcc_core::oracle::RowOracle;
use rcc_core::rng::rng_from_seed;

fn line_target(model: &LatticeModel, rows: std::ops::Range<usize>) -> ComponentVector {
    let lc = row_chain(model, DEFAULT_STATE_CAP).unwrap();
    RowOracle::new(model, &lc).block_moment(rows).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = rng_from_seed(21);
    let model = random_model(&mut rng, LatticeShape::new(2, 4).unwrap(), 3, 0.8);
    let target = Enumeration::new(&random_model(&mut rng, LatticeShape::new(2, 4).unwrap(), 3, 0.8))
        .moments(model.family());
    let theta = model.params().clone();
    let grad = objective_gradient(model.family(), &target, &theta, DEFAULT_STATE_CAP).unwrap();
    let h = 1e-5;
    for i in 0..theta.values().len() {
        let mut up = theta.clone();
        up.values_mut()[i] += h;
        let mut down = theta.clone();
        down.values_mut()[i] -= h;
        let fd = (objective(model.family(), &target, &up, DEFAULT_STATE_CAP).unwrap()
            - objective(model.family(), &target, &down, DEFAULT_STATE_CAP).unwrap())
            / (2.0 * h);
        assert!((fd - grad.values()[i]).abs() < 1e-6, "component {i}: {fd} vs {}", grad.values()[i]);
    }
}

#[test]
fn moments_are_the_gradient_of_the_log_partition() {
    let mut rng = rng_from_seed(22);
    let model = random_model(&mut rng, LatticeShape::new(3, 3).unwrap(), 2, 1.0);
    let zero = ComponentVector::zeros(model.shape());
    let eval = evaluate(model.family(), &zero, model.params(), DEFAULT_STATE_CAP).unwrap();
    let e = Enumeration::new(&model);
    assert!(eval.moment.max_abs_diff(&e.moments(model.family())) < 1e-10);
    assert!((eval.objective - e.log_z).abs() < 1e-10);
}

#[test]
fn fit_reaches_oracle_line_targets() {
    let model = ising(16, 6, 0.4);
    let options = FitOptions::default();
    for rows in [7..8, 6..8, 6..9, 6..10] {
        let target = line_target(&model, rows.clone());
        let init = model.params().restrict_rows(rows).unwrap();
        let r = fit(model.family(), &target, &init, &options).unwrap();
        assert!(r.converged);
        assert!(r.achieved_moment.max_abs_diff(&target) <= 1e-6);
        assert_eq!(r.target_moment, target);
    }
}

#[test]
fn objective_trace_never_increases_beyond_rounding() {
    let mut rng = rng_from_seed(23);
    let model = random_model(&mut rng, LatticeShape::new(6, 4).unwrap(), 2, 0.6);
    let target = line_target(&model, 2..4);
    let init = ComponentVector::zeros(target.shape());
    // a random family can be badly conditioned; the trace matters either way
    let options = FitOptions {
        max_iter: 2000,
        ..FitOptions::default()
    };
    let r = match fit(model.family(), &target, &init, &options) {
        Ok(r) => r,
        Err(RccError::DidNotConverge { best, .. }) => *best,
        Err(e) => panic!("{e}"),
    };
    assert!(r.objective_trace.len() > 2);
    for w in r.objective_trace.windows(2) {
        assert!(w[1] <= w[0] + OBJECTIVE_NOISE * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn cross_entropy_is_the_reduced_entropy() {
    // with matched moments, Phi(theta*) - <theta*, mu> is H of the reduced model
    let model = ising(12, 5, 0.4);
    let target = line_target(&model, 5..7);
    let init = model.params().restrict_rows(5..7).unwrap();
    let options = FitOptions {
        tolerance: 1e-11,
        ..FitOptions::default()
    };
    let r = fit(model.family(), &target, &init, &options).unwrap();
    let reduced = LatticeModel::new(model.family().clone(), r.theta_hat.clone()).unwrap();
    let cross = block_chain(&reduced, DEFAULT_STATE_CAP).unwrap().log_partition() - r.theta_hat.dot(&target);
    let reduced_entropy = Enumeration::new(&reduced).entropy();
    assert!((cross - reduced_entropy).abs() < 1e-8, "{cross} vs {reduced_entropy}");
}

#[test]
fn fitting_model_moments_recovers_the_model() {
    // a minimal family is identifiable, so the fit returns the generating theta
    let mut rng = rng_from_seed(24);
    let shape = LatticeShape::new(2, 3).unwrap();
    let truth = LatticeModel::ising(shape, 0.0, 0.0).unwrap();
    let values = (0..shape.components()).map(|_| rand::Rng::random_range(&mut rng, -0.7..0.7)).collect();
    let truth = truth.with_params(ComponentVector::from_values(shape, values).unwrap()).unwrap();
    let target = Enumeration::new(&truth).moments(truth.family());
    let options = FitOptions {
        tolerance: 1e-10,
        ..FitOptions::default()
    };
    let r = fit(truth.family(), &target, &ComponentVector::zeros(shape), &options).unwrap();
    assert!(r.theta_hat.max_abs_diff(truth.params()) < 1e-6);
}

#[test]
fn hull_boundary_targets_are_rejected() {
    let model = ising(4, 3, 0.4);
    // all-equal samples put every moment on the hull boundary
    let x = rcc_core::model::Configuration::filled(model.shape(), 1);
    let target = empirical_moment(&[x.clone(), x], model.family()).unwrap();
    assert!(matches!(check_hull(model.family(), &target), Err(RccError::HullBoundary { .. })));
    let err = fit(model.family(), &target, model.params(), &FitOptions::default()).unwrap_err();
    assert!(matches!(err, RccError::HullBoundary { .. }));
    check_hull(model.family(), &uniform_moment(model.shape(), model.family())).unwrap();
}

#[test]
fn iteration_budget_is_reported_with_the_best_iterate() {
    let model = ising(8, 4, 0.5);
    let target = line_target(&model, 3..5);
    let options = FitOptions {
        max_iter: 2,
        tolerance: 1e-12,
        ..FitOptions::default()
    };
    match fit(model.family(), &target, &ComponentVector::zeros(target.shape()), &options) {
        Err(RccError::DidNotConverge { iterations, best, .. }) => {
            assert_eq!(iterations, 2);
            assert!(!best.converged);
            assert_eq!(best.objective_trace.len(), 3);
        }
        other => panic!("expected DidNotConverge, got {other:?}"),
    }
}

#[test]
fn fit_results_survive_key_value_round_trip() {
    let model = ising(8, 3, 0.3);
    let target = line_target(&model, 3..5);
    let r = fit(model.family(), &target, &ComponentVector::zeros(target.shape()), &FitOptions::default()).unwrap();
    assert_eq!(FitResult::from_key_value(&r.to_key_value()).unwrap(), r);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_is_convex_along_lines(seed in 0u64..10_000, t in 0.05f64..0.95) {
        let mut rng = rng_from_seed(seed);
        let model = random_model(&mut rng, LatticeShape::new(2, 3).unwrap(), 2, 1.0);
        let other = random_model(&mut rng, LatticeShape::new(2, 3).unwrap(), 2, 1.0);
        let target = Enumeration::new(&other).moments(model.family());
        let a = model.params();
        let b = other.params();
        let mix = ComponentVector::from_values(
            a.shape(),
            a.values().iter().zip(b.values()).map(|(x, y)| (1.0 - t) * x + t * y).collect(),
        ).unwrap();
        let f = |v: &ComponentVector| objective(model.family(), &target, v, DEFAULT_STATE_CAP).unwrap();
        prop_assert!(f(&mix) <= (1.0 - t) * f(a) + t * f(b) + 1e-12);
    }

    #[test]
    fn fitted_moments_match_random_targets(seed in 0u64..10_000) {
        let mut rng = rng_from_seed(seed);
        let shape = LatticeShape::new(2, 3).unwrap();
        let source = random_model(&mut rng, shape, 2, 1.0);
        let family = LatticeModel::ising(shape, 0.0, 0.0).unwrap().family().clone();
        let target = Enumeration::new(&LatticeModel::new(family.clone(), source.params().clone()).unwrap()).moments(&family);
        let r = fit(&family, &target, &ComponentVector::zeros(shape), &FitOptions::default()).unwrap();
        prop_assert!(r.achieved_moment.max_abs_diff(&target) <= 1e-6);
    }
}
