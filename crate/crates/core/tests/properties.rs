mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slap_core::planner::options_graph;
use slap_core::shortcut::{get_shortcut_data, prune_random_rollouts};
use slap_core::{Action, EnvConfig, Obstacle2d};

fn env() -> Obstacle2d {
    Obstacle2d::new(EnvConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sampling_and_stepping_are_deterministic(seed in 0u64..10_000, dx in -0.1f64..0.1, dy in -0.1f64..0.1, grip in -1.0f64..1.0) {
        let env = env();
        let a = env.sample_task(seed).unwrap();
        let b = env.sample_task(seed).unwrap();
        prop_assert_eq!(&a.initial_state, &b.initial_state);
        let act = Action::new(dx, dy, grip);
        let (x, y) = (env.step(&a.initial_state, act), env.step(&b.initial_state, act));
        prop_assert!(x.flat_features().iter().zip(y.flat_features()).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert!(env.validate_state(&x).is_ok());
    }

    #[test]
    fn fewer_edges_never_shorten_plans(seed in any::<u64>(), drop_mask in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let full = common::random_graph(&mut rng);
        let mut sub = full.clone();
        for (i, e) in sub.edges.iter_mut().enumerate() {
            if drop_mask >> (i % 64) & 1 == 1 {
                e.transitions.clear();
            }
        }
        match (common::dijkstra_cost(&full), common::dijkstra_cost(&sub)) {
            (Some(a), Some(b)) => prop_assert!(a <= b),
            (None, Some(_)) => prop_assert!(false, "removing edges created a plan"),
            _ => {}
        }
    }

    #[test]
    fn dijkstra_agrees_with_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = common::random_graph(&mut rng);
        prop_assert_eq!(common::dijkstra_cost(&g), common::enumerate_min_cost(&g));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn pruning_is_monotone_in_threshold_and_budget(seed in any::<u64>(), k in 0usize..6) {
        let env = env();
        let graphs: Vec<_> = (0..3).map(|s| options_graph(&env, &env.sample_task(s).unwrap()).unwrap()).collect();
        let cands = get_shortcut_data(&graphs);
        for c in cands.iter().take(4) {
            let small = prune_random_rollouts(&env, c, 40, 60, k, seed);
            let large = prune_random_rollouts(&env, c, 80, 60, k, seed);
            let stricter = prune_random_rollouts(&env, c, 40, 60, k + 1, seed);
            prop_assert!(small.successes <= large.successes);
            prop_assert_eq!(small.successes, stricter.successes);
            prop_assert!(!stricter.keep || small.keep);
            prop_assert_eq!(small.keep, small.successes >= k);
        }
    }
}
