use delib_core::gridworld::{build_four_rooms, build_intersection_maze, GridLayout, DEFAULT_SLIP};
use delib_core::mdp::fixtures::random_mdp;
use delib_core::mdp::{
    policy_evaluation, policy_evaluation_iterative, sample_transition, value_iteration, StationaryPolicy,
};
use delib_core::Mdp;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_policy(ns: usize, na: usize, rng: &mut ChaCha8Rng) -> StationaryPolicy {
    use rand::Rng;
    let mut probs: Vec<f64> = (0..ns * na).map(|_| rng.gen_range(0.01..1.0)).collect();
    delib_core::mdp::fixtures::normalize_rows(&mut probs, na);
    StationaryPolicy::new(ns, na, probs).unwrap()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn four_rooms_uniform_policy_direct_vs_iterative() {
    let world = build_four_rooms(DEFAULT_SLIP, 0.99).unwrap();
    let mdp = &world.mdp;
    let uniform = StationaryPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let direct = policy_evaluation(mdp, &uniform, 1e-10).unwrap();
    // successive differences below 1e-14 bound the error by 1e-12 at gamma = 0.99
    let iterative = policy_evaluation_iterative(mdp, &uniform, 1e-14).unwrap();
    assert!(sup(&direct, &iterative) < 1e-10);
    assert!(direct.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert_eq!(direct[world.goal_state], 0.0);
}

#[test]
fn four_rooms_greedy_policy_attains_value_iteration() {
    let world = build_four_rooms(DEFAULT_SLIP, 0.99).unwrap();
    let tol = 1e-10;
    let vi = value_iteration(&world.mdp, tol).unwrap();
    let greedy = policy_evaluation(&world.mdp, &vi.policy(world.mdp.n_actions()), tol).unwrap();
    assert!(sup(&vi.values, &greedy) <= tol / (1.0 - 0.99) + 1e-12);
    let uniform = StationaryPolicy::uniform(world.mdp.n_states(), 4);
    let v = policy_evaluation(&world.mdp, &uniform, tol).unwrap();
    assert!(v.iter().zip(&vi.values).all(|(a, b)| *a <= b + tol));
}

#[test]
fn four_rooms_slip_frequencies() {
    let world = build_four_rooms(DEFAULT_SLIP, 0.99).unwrap();
    let mdp = &world.mdp;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    // a corner cell (two walls) and a doorway, every action
    let cells = [(1, 1), (3, 6)];
    for cell in cells {
        let s = world.state(cell).unwrap();
        for a in 0..mdp.n_actions() {
            let mut counts = vec![0usize; mdp.n_states()];
            for _ in 0..n {
                let (s2, r) = sample_transition(mdp, s, a, &mut rng).unwrap();
                assert_eq!(r, mdp.reward(s, a));
                counts[s2] += 1;
            }
            for (s2, &c) in counts.iter().enumerate() {
                let p = mdp.prob(s, a, s2);
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                let freq = c as f64 / n as f64;
                assert!((freq - p).abs() <= 3.0 * sigma, "cell {cell:?} a {a} -> {s2}: {freq} vs {p}");
            }
        }
    }
}

/// Counts open cells with at least three open 4-neighbours directly on the text.
fn count_intersections(text: &str) -> usize {
    let grid: Vec<Vec<bool>> = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.chars().map(|c| c != '#').collect())
        .collect();
    let open = |r: isize, c: isize| {
        r >= 0
            && c >= 0
            && grid.get(r as usize).and_then(|row| row.get(c as usize)).copied().unwrap_or(false)
    };
    let mut count = 0;
    for (r, row) in grid.iter().enumerate() {
        for c in 0..row.len() {
            let (r, c) = (r as isize, c as isize);
            if !open(r, c) {
                continue;
            }
            let degree = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
                .iter()
                .filter(|&&(a, b)| open(a, b))
                .count();
            if degree >= 3 {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn ladder_maze_intersections_match_text_count() {
    let layout = GridLayout::default_maze();
    let expected = count_intersections(&layout.to_string());
    let world = build_intersection_maze(layout, 0.99).unwrap();
    let found = world.intersections();
    assert_eq!(found.len(), expected);
    assert!(expected > 0);
    for s in found {
        assert!(world.layout.degree(world.cell(s).unwrap()) >= 3);
    }
}

#[test]
fn generated_worlds_are_valid_mdps() {
    for slip in [0.0, 0.1, DEFAULT_SLIP, 0.9] {
        let world = build_four_rooms(slip, 0.95).unwrap();
        let mdp = &world.mdp;
        assert_eq!(mdp.n_states(), 104);
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let row = mdp.transition_row(s, a);
                assert!(row.iter().all(|&p| p >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
        let g = world.goal_state;
        for a in 0..mdp.n_actions() {
            assert_eq!(mdp.prob(g, a, g), 1.0);
            assert_eq!(mdp.reward(g, a), 0.0);
        }
    }
    assert!(build_four_rooms(1.0, 0.9).is_err());
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn evaluation_is_permutation_invariant(seed in any::<u64>(), ns in 2usize..7, na in 1usize..4, gamma in 0.0f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(ns, na, gamma, &mut rng);
        let policy = random_policy(ns, na, &mut rng);
        let perm = permutation(ns, seed ^ 1);
        let permuted: Mdp = mdp.permuted(&perm).unwrap();
        let mut probs = vec![0.0; ns * na];
        for (old, &new) in perm.iter().enumerate() {
            probs[new * na..(new + 1) * na].copy_from_slice(policy.row(old));
        }
        let permuted_policy = StationaryPolicy::new(ns, na, probs).unwrap();
        let tol = 1e-10;
        let v = policy_evaluation(&mdp, &policy, tol).unwrap();
        let pv = policy_evaluation(&permuted, &permuted_policy, tol).unwrap();
        let star = value_iteration(&mdp, tol).unwrap().values;
        let pstar = value_iteration(&permuted, tol).unwrap().values;
        for (old, &new) in perm.iter().enumerate() {
            prop_assert!((v[old] - pv[new]).abs() <= 2.0 * tol);
            prop_assert!((star[old] - pstar[new]).abs() <= 2.0 * tol);
        }
    }

    #[test]
    fn any_policy_is_below_the_optimum(seed in any::<u64>(), ns in 1usize..8, na in 1usize..4, gamma in 0.0f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(ns, na, gamma, &mut rng);
        let policy = random_policy(ns, na, &mut rng);
        let tol = 1e-10;
        let v = policy_evaluation(&mdp, &policy, tol).unwrap();
        // a Bellman residual of e leaves V* within e / (1 - gamma)
        let star = value_iteration(&mdp, tol * (1.0 - gamma) / 2.0).unwrap().values;
        for (a, b) in v.iter().zip(&star) {
            prop_assert!(*a <= b + tol);
        }
    }

    #[test]
    fn direct_and_iterative_agree(seed in any::<u64>(), ns in 1usize..8, na in 1usize..4, gamma in 0.0f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(ns, na, gamma, &mut rng);
        let policy = random_policy(ns, na, &mut rng);
        let direct = policy_evaluation(&mdp, &policy, 1e-10).unwrap();
        let iterative = policy_evaluation_iterative(&mdp, &policy, 1e-12).unwrap();
        prop_assert!(sup(&direct, &iterative) <= 1e-9);
    }
}
