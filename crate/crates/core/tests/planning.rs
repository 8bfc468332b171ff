use std::sync::Arc;

use grl::bayes::EnvRef;
use grl::discount::{Discount, Geometric, SqrtExp, Window};
use grl::envs::{RandomEnv, RandomPolicy};
use grl::interaction::{rollout, Alphabet, Environment, History, Reward};
use grl::metrics::value_gap_with;
use grl::planner::{optimal_plan, tv_distance, value_of_policy, Objective, OptimalPolicy, Planner};
use proptest::prelude::*;

fn env(seed: u64, actions: usize, states: Option<u64>) -> RandomEnv {
    let alphabet =
        Alphabet::new(actions, 1, vec![Reward::ZERO, Reward::HALF, Reward::ONE]).unwrap();
    RandomEnv::new(seed, alphabet, states, 0.3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn values_are_normalized(seed in any::<u64>(), gamma in 0.1f64..0.99, m in 1usize..5) {
        let nu = env(seed, 2, Some(3));
        let d = Geometric::new(gamma).unwrap();
        let plan = optimal_plan(&nu, &d, &History::new(), m).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&plan.root_value));
        let pi = RandomPolicy::new(seed ^ 7, 2, false);
        let v = value_of_policy(&nu, &pi, &d, &History::new(), m).unwrap();
        prop_assert!(v <= plan.root_value + 1e-12);
    }

    #[test]
    fn value_difference_is_bounded_by_total_variation(seed in any::<u64>(), gamma in 0.1f64..0.99, m in 1usize..5) {
        let nu = env(seed, 3, Some(2));
        let rho = env(seed.wrapping_add(1), 3, None);
        let (p1, p2) = (RandomPolicy::new(seed, 3, false), RandomPolicy::new(seed ^ 3, 3, true));
        let d = Geometric::new(gamma).unwrap();
        let h = History::new();
        let v1 = value_of_policy(&nu, &p1, &d, &h, m).unwrap();
        let v2 = value_of_policy(&rho, &p2, &d, &h, m).unwrap();
        let dm = tv_distance(&nu, &p1, &rho, &p2, &h, m).unwrap();
        prop_assert!((v1 - v2).abs() <= dm + 1e-9);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&dm));
    }

    #[test]
    fn memoization_preserves_values(seed in any::<u64>(), len in 0usize..4) {
        let nu = env(seed, 2, Some(4));
        let d = SqrtExp::new();
        let h = rollout(&nu, &RandomPolicy::new(seed, 2, false), len, seed).unwrap();
        let state = nu.state_at(&h);
        let window = Window::new(&d, h.time(), h.time() + 3);
        for objective in [Objective::Max, Objective::Min] {
            let a = Planner::default().plan(&nu, &state, &h, &window, objective, None).unwrap();
            let b = Planner::default().unmemoized().plan(&nu, &state, &h, &window, objective, None).unwrap();
            prop_assert!((a.root_value - b.root_value).abs() < 1e-12);
            prop_assert!(a.node_count <= b.node_count);
        }
    }

    #[test]
    fn optimal_policy_has_no_gap(seed in any::<u64>(), m in 1usize..5) {
        let nu: EnvRef = Arc::new(env(seed, 2, Some(3)));
        let d: Arc<dyn Discount> = Arc::new(Geometric::new(0.6).unwrap());
        let policy = OptimalPolicy::new(nu.clone(), d.clone(), m, Planner::default());
        let h = History::new();
        let gap = value_gap_with(&Planner::default(), nu.as_ref(), &nu.initial_state(), &policy, d.as_ref(), &h, m).unwrap();
        prop_assert!(gap.abs() < 1e-12);
    }
}
