use delib_core::deliberation::{
    deliberation_value, expected_duration, optimize_mu, transformed_evaluate, DeliberationConfig, LambdaSpec,
};
use delib_core::gridworld::{build_four_rooms, DEFAULT_SLIP};
use delib_core::mdp::fixtures::{chain2, random_mdp, GO};
use delib_core::mdp::value_iteration;
use delib_core::options::{intra_option_evaluate, start_distribution, SATURATED_LOGIT};
use delib_core::oracle::{
    augmented_cost_iteration, augmented_value_iteration, enumerate_deterministic_mu, monte_carlo_objective,
};
use delib_core::{Mdp, Theta};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_instance(seed: u64, ns: usize, na: usize, no: usize, gamma: f64) -> (Mdp, Theta) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = random_mdp(ns, na, gamma, &mut rng);
    let eps = rng.gen_range(0.0..1.0);
    let theta = Theta::random(ns, na, no, eps, 2.0, &mut rng);
    (mdp, theta)
}

fn code(choices: &[usize], no: usize) -> usize {
    choices.iter().rev().fold(0, |acc, &c| acc * no + c)
}

#[test]
fn constant_termination_closed_form_on_chain2() {
    // one option: every step ends with a switch coin of probability kappa,
    // so D = gamma kappa / (1 - lambda) whatever the option policy does
    let mdp = chain2();
    let gamma = mdp.gamma();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kappa_logit in [-2.0, 0.0, 1.3] {
        let mut theta = Theta::random(2, 2, 1, 0.0, 1.0, &mut rng);
        theta.set_all_beta_logits(kappa_logit);
        let kappa = theta.beta(0, 0);
        for lambda in [0.0, 0.3, gamma] {
            let config = DeliberationConfig::new(1.0, LambdaSpec::Value(lambda));
            let d = deliberation_value(&mdp, &theta, &config, 1e-12).unwrap();
            let expected = gamma * kappa / (1.0 - lambda);
            for &x in d.as_slice() {
                assert!((x - expected).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn always_switching_go_option_transformed_values() {
    let mdp = chain2();
    let gamma = mdp.gamma();
    let mut theta = Theta::zeros(2, 2, 1, 0.0);
    for s in 0..2 {
        let i = theta.pi_index(0, s, GO);
        theta.theta_pi[i] = SATURATED_LOGIT;
        let i = theta.pi_index(0, s, 1 - GO);
        theta.theta_pi[i] = -SATURATED_LOGIT;
    }
    theta.set_all_beta_logits(SATURATED_LOGIT);
    let eta = 0.3;
    let tables = transformed_evaluate(&mdp, &theta, &DeliberationConfig::new(eta, LambdaSpec::GAMMA), 1e-12).unwrap();
    // cost gamma at every step, discounted by gamma
    let shift = eta * gamma / (1.0 - gamma);
    assert!((tables.qc[(0, 0)] - (1.0 - shift)).abs() <= 1e-10);
    assert!((tables.qc[(1, 0)] + shift).abs() <= 1e-10);
}

#[test]
fn transformed_and_cost_values_match_the_oracle() {
    let world = build_four_rooms(DEFAULT_SLIP, 0.99).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let theta = Theta::random(104, 4, 4, 0.1, 1.0, &mut rng);
    for eta in [0.005, 0.02] {
        let config = DeliberationConfig::new(eta, LambdaSpec::GAMMA);
        let lib = transformed_evaluate(&world.mdp, &theta, &config, 1e-10).unwrap();
        let oracle = augmented_value_iteration(&world.mdp, &theta, Some(&config), 1e-12).unwrap();
        assert!(sup(lib.qc.as_slice(), &oracle) <= 1e-8);
        let d_oracle = augmented_cost_iteration(&world.mdp, &theta, 0.99, 1e-12).unwrap();
        assert!(sup(lib.d.as_slice(), &d_oracle) <= 1e-8);
    }
    let zero = DeliberationConfig::new(1.0, LambdaSpec::ZERO);
    let d0 = deliberation_value(&world.mdp, &theta, &zero, 1e-10).unwrap();
    let d0_oracle = augmented_cost_iteration(&world.mdp, &theta, 0.0, 1e-12).unwrap();
    assert!(sup(d0.as_slice(), &d0_oracle) <= 1e-12);
}

#[test]
fn optimize_mu_matches_enumeration_on_two_state_instances() {
    let mut instances = vec![];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    instances.push((chain2(), Theta::random(2, 2, 2, 0.0, 2.0, &mut rng)));
    for seed in 0..6 {
        instances.push(random_instance(seed, 2, 2, 2, 0.9));
    }
    for (mdp, theta) in &instances {
        for eta in [0.0, 0.01, 0.1] {
            let config = DeliberationConfig::new(eta, LambdaSpec::GAMMA);
            let plan = optimize_mu(mdp, theta, &config, 1e-10).unwrap();
            let all = enumerate_deterministic_mu(mdp, theta, &config).unwrap();
            let planned = all.objectives[code(&plan.choices, 2)];
            assert!((planned - all.best_objective).abs() <= 1e-10, "eta {eta}: {planned} vs {}", all.best_objective);
        }
    }
}

#[test]
fn large_eta_prefers_the_long_option() {
    // both options always go; option 0 ends every step, option 1 never does
    let mdp = chain2();
    let mut theta = Theta::zeros(2, 2, 2, 0.0);
    for o in 0..2 {
        for s in 0..2 {
            let i = theta.pi_index(o, s, GO);
            theta.theta_pi[i] = SATURATED_LOGIT;
            let i = theta.pi_index(o, s, 1 - GO);
            theta.theta_pi[i] = -SATURATED_LOGIT;
            let j = theta.beta_index(s, o);
            theta.theta_beta[j] = if o == 0 { SATURATED_LOGIT } else { -SATURATED_LOGIT };
        }
    }
    let config = DeliberationConfig::new(5.0, LambdaSpec::GAMMA);
    let plan = optimize_mu(&mdp, &theta, &config, 1e-10).unwrap();
    let all = enumerate_deterministic_mu(&mdp, &theta, &config).unwrap();
    assert_eq!(plan.choices, vec![1, 1]);
    // the choice in state 1 is never consulted, so only state 0 is pinned
    assert_eq!(all.best[0], 1);
    assert!((all.objectives[code(&plan.choices, 2)] - all.best_objective).abs() <= 1e-12);
    let d = deliberation_value(&mdp, &plan.theta, &config, 1e-10).unwrap();
    assert!(d[(0, 1)] < d[(0, 0)], "{d:?}");
}

#[test]
fn primitive_options_recover_the_base_optimum() {
    let world = build_four_rooms(DEFAULT_SLIP, 0.99).unwrap();
    let theta = Theta::primitive(104, 4);
    let config = DeliberationConfig::new(0.0, LambdaSpec::GAMMA);
    let plan = optimize_mu(&world.mdp, &theta, &config, 1e-9).unwrap();
    let vi = value_iteration(&world.mdp, 1e-12).unwrap();
    for s in 0..104 {
        let best = plan.q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((best - vi.values[s]).abs() <= 1e-6);
    }

    let mdp = chain2();
    let all = enumerate_deterministic_mu(&mdp, &Theta::primitive(2, 2), &config).unwrap();
    let vi = value_iteration(&mdp, 1e-12).unwrap();
    assert!((all.best_objective - dot(mdp.initial_dist(), &vi.values)).abs() <= 1e-9);
}

#[test]
fn monte_carlo_matches_analytic_tables_on_chain2() {
    let mdp = chain2();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let theta = Theta::random(2, 2, 2, 0.2, 1.5, &mut rng);
    let alpha = start_distribution(&mdp, &theta);
    let q = intra_option_evaluate(&mdp, &theta, 1e-12).unwrap().q;
    for lambda in [LambdaSpec::GAMMA, LambdaSpec::ZERO, LambdaSpec::Value(0.3)] {
        let config = DeliberationConfig::new(0.1, lambda);
        let d = deliberation_value(&mdp, &theta, &config, 1e-12).unwrap();
        let est = monte_carlo_objective(&mdp, &theta, &config, 1_000_000, 64, &mut rng).unwrap();
        let q_alpha = dot(alpha.as_slice(), q.as_slice());
        let d_alpha = dot(alpha.as_slice(), d.as_slice());
        assert!((est.mean_return - q_alpha).abs() <= 3.0 * est.return_std_error + est.return_bias_bound);
        assert!((est.mean_cost - d_alpha).abs() <= 3.0 * est.cost_std_error + est.cost_bias_bound);
    }
}

#[test]
fn monte_carlo_error_shrinks_as_one_over_root_n() {
    let mdp = chain2();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let theta = Theta::random(2, 2, 2, 0.2, 1.5, &mut rng);
    let config = DeliberationConfig::new(0.1, LambdaSpec::GAMMA);
    let n = 100_000;
    let small = monte_carlo_objective(&mdp, &theta, &config, n, 64, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let large = monte_carlo_objective(&mdp, &theta, &config, 4 * n, 64, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for (a, b) in [
        (small.return_std_error, large.return_std_error),
        (small.cost_std_error, large.cost_std_error),
        (small.objective_std_error, large.objective_std_error),
    ] {
        let ratio = a / b;
        assert!((2.0 / 1.5..=2.0 * 1.5).contains(&ratio), "ratio {ratio}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn transformed_values_are_linear_in_eta(seed in any::<u64>(), ns in 1usize..6, na in 1usize..4, no in 1usize..4, gamma in 0.0f64..0.95, eta in 0.0f64..1.0) {
        let (mdp, theta) = random_instance(seed, ns, na, no, gamma);
        let config = DeliberationConfig::new(eta, LambdaSpec::GAMMA);
        let tables = transformed_evaluate(&mdp, &theta, &config, 1e-10).unwrap();
        let q = intra_option_evaluate(&mdp, &theta, 1e-10).unwrap().q;
        for z in 0..q.len() {
            let expected = q.as_slice()[z] - eta * tables.d.as_slice()[z];
            prop_assert!((tables.qc.as_slice()[z] - expected).abs() <= 1e-10);
        }
    }

    #[test]
    fn switching_costs_are_non_negative(seed in any::<u64>(), ns in 1usize..6, na in 1usize..4, no in 1usize..4, gamma in 0.0f64..0.95, lambda in 0.0f64..0.99) {
        let (mdp, theta) = random_instance(seed, ns, na, no, gamma);
        let config = DeliberationConfig::new(1.0, LambdaSpec::Value(lambda));
        let d = deliberation_value(&mdp, &theta, &config, 1e-9).unwrap();
        prop_assert!(d.as_slice().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn duration_is_monotone_in_kappa(k1 in 0.0f64..1.0, k2 in 0.0f64..1.0, gamma in 0.0f64..0.999, eta in 0.001f64..1.0) {
        prop_assume!(k1 < k2);
        prop_assume!(gamma > 0.0);
        let (d1, c1) = expected_duration(k1, gamma, eta).unwrap();
        let (d2, c2) = expected_duration(k2, gamma, eta).unwrap();
        prop_assert!(d1 < d2);
        prop_assert!(c1 > c2);
    }
}
