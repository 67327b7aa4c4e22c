mod common;

use common::{random_model, ChainMarginals, Enumeration};
use proptest::prelude::*;
use rand::Rng;
use rcc_core::chain::DEFAULT_STATE_CAP;
use rcc_core::lattice::{block_chain, column_chain, row_chain, Clamp};
use rcc_core::model::{statistic, LatticeShape, Symbol};
use rcc_core::rng::rng_from_seed;

const TOL: f64 = 1e-9;

#[test]
fn column_and_row_chains_match_enumeration_binary() {
    let mut rng = rng_from_seed(11);
    for i in 0..100 {
        let shape = LatticeShape::new(rng.random_range(1..=3), rng.random_range(1..=4)).unwrap();
        let model = random_model(&mut rng, shape, 2, 1.5);
        let reference = ChainMarginals::from_enumeration(&Enumeration::new(&model));
        for lc in [block_chain(&model, DEFAULT_STATE_CAP).unwrap(), row_chain(&model, DEFAULT_STATE_CAP).unwrap()] {
            let got = ChainMarginals::from_chain(&model, &lc);
            let d = got.max_diff(&reference);
            assert!(d <= TOL, "model {i} {shape:?} {:?}: {d:e}", lc.orientation());
        }
    }
}

#[test]
fn column_and_row_chains_match_enumeration_ternary() {
    let mut rng = rng_from_seed(12);
    let shape = LatticeShape::new(2, 3).unwrap();
    for i in 0..20 {
        let model = random_model(&mut rng, shape, 3, 1.5);
        let reference = ChainMarginals::from_enumeration(&Enumeration::new(&model));
        for lc in [block_chain(&model, DEFAULT_STATE_CAP).unwrap(), row_chain(&model, DEFAULT_STATE_CAP).unwrap()] {
            let d = ChainMarginals::from_chain(&model, &lc).max_diff(&reference);
            assert!(d <= TOL, "model {i}: {d:e}");
        }
    }
}

#[test]
fn chain_moments_and_entropy_match_enumeration() {
    let mut rng = rng_from_seed(13);
    for _ in 0..20 {
        let model = random_model(&mut rng, LatticeShape::new(3, 3).unwrap(), 2, 1.0);
        let e = Enumeration::new(&model);
        let lc = block_chain(&model, DEFAULT_STATE_CAP).unwrap();
        let post = lc.posterior();
        assert!(lc.moments(&post).max_abs_diff(&e.moments(model.family())) < TOL);
        assert!((post.entropy() - e.entropy()).abs() < TOL);
    }
}

#[test]
fn log_prob_of_every_configuration_matches_enumeration() {
    let mut rng = rng_from_seed(14);
    let model = random_model(&mut rng, LatticeShape::new(2, 3).unwrap(), 3, 1.0);
    let e = Enumeration::new(&model);
    let lc = block_chain(&model, DEFAULT_STATE_CAP).unwrap();
    let post = lc.posterior();
    for (i, x) in e.configs.iter().enumerate() {
        let states = lc.states_of(x).unwrap();
        assert!((post.log_prob(&states) - e.prob(i).ln()).abs() < TOL);
        assert_eq!(&lc.configuration_of(&states), x);
    }
}

#[test]
fn clamped_strip_is_the_enumerated_conditional() {
    let mut rng = rng_from_seed(15);
    let model = random_model(&mut rng, LatticeShape::new(4, 3).unwrap(), 2, 1.0);
    let e = Enumeration::new(&model);
    let above: Vec<Symbol> = vec![1, 0, 1];
    let below: Vec<Symbol> = vec![0, 0, 1];
    let lc = column_chain(&model, 1..3, Clamp::both(&above, &below), DEFAULT_STATE_CAP).unwrap();
    let post = lc.posterior();
    let mut total = 0.0;
    let mut joint = Vec::new();
    for (i, x) in e.configs.iter().enumerate() {
        if x.row(0) == &above[..] && x.row(3) == &below[..] {
            total += e.prob(i);
            joint.push((x.rows(1..3).unwrap(), e.prob(i)));
        }
    }
    for (strip, p) in joint {
        let states = lc.states_of(&strip).unwrap();
        assert!((post.log_prob(&states).exp() - p / total).abs() < TOL);
    }
}

#[test]
fn ffbs_draws_follow_the_chain_law() {
    let mut rng = rng_from_seed(16);
    let model = random_model(&mut rng, LatticeShape::new(2, 2).unwrap(), 2, 1.0);
    let e = Enumeration::new(&model);
    let lc = block_chain(&model, DEFAULT_STATE_CAP).unwrap();
    let post = lc.posterior();
    let draws = 40_000;
    let mut counts = vec![0usize; e.configs.len()];
    for _ in 0..draws {
        let x = lc.configuration_of(&post.sample(&mut rng));
        counts[e.configs.iter().position(|c| *c == x).unwrap()] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let expected = e.prob(i) * draws as f64;
            (n as f64 - expected).powi(2) / expected
        })
        .sum();
    // 15 degrees of freedom; 99.9% quantile is 37.7
    assert!(chi2 < 37.7, "chi2 = {chi2}");
}

#[test]
fn statistic_dot_theta_is_the_energy() {
    let mut rng = rng_from_seed(17);
    let model = random_model(&mut rng, LatticeShape::new(3, 2).unwrap(), 3, 1.0);
    let e = Enumeration::new(&model);
    for x in e.configs.iter().step_by(37) {
        let direct = statistic(x, model.family()).dot(model.params());
        assert!((direct - model.energy(x)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chain_marginals_are_normalised(seed in 0u64..10_000, rows in 1usize..4, cols in 1usize..5, q in 2usize..4) {
        let mut rng = rng_from_seed(seed);
        let model = random_model(&mut rng, LatticeShape::new(rows, cols).unwrap(), q, 2.0);
        let lc = block_chain(&model, DEFAULT_STATE_CAP).unwrap();
        let m = ChainMarginals::from_chain(&model, &lc);
        for table in m.nodes.iter().chain(&m.edges) {
            prop_assert!((table.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(table.iter().all(|&p| p >= 0.0));
        }
        // both groupings describe the same distribution
        let rc = row_chain(&model, DEFAULT_STATE_CAP).unwrap();
        prop_assert!((rc.log_partition() - lc.log_partition()).abs() < 1e-9);
    }

    #[test]
    fn transposition_preserves_the_partition_function(seed in 0u64..10_000, rows in 1usize..4, cols in 1usize..4) {
        let mut rng = rng_from_seed(seed);
        let model = random_model(&mut rng, LatticeShape::new(rows, cols).unwrap(), 2, 1.0);
        let a = block_chain(&model, DEFAULT_STATE_CAP).unwrap().log_partition();
        let b = block_chain(&model.transpose(), DEFAULT_STATE_CAP).unwrap().log_partition();
        prop_assert!((a - b).abs() < 1e-9);
    }
}
