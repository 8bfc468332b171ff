use std::sync::Arc;

use grl::bayes::{BeliefState, EnvRef};
use grl::discount::Geometric;
use grl::envs::{
    example1_nu_inf, example1_nu_k, make_example1_class, make_example1_countable_class, ALPHA, BETA,
};
use grl::interaction::{Environment, History, Reward};
use grl::planner::optimal_plan;
use proptest::prelude::*;

fn play(env: &dyn Environment, actions: &[grl::interaction::Action]) -> History {
    let mut h = History::new();
    let mut state = env.initial_state();
    for &a in actions {
        let t = h.time();
        let p = env.predict(&state, t, a);
        let i = p.iter().position(|&x| x == 1.0).expect("deterministic");
        let e = env.alphabet().percept(i);
        env.advance(&mut state, t, a, e);
        h.push(a, e);
    }
    h
}

#[test]
fn beta_forever_pays_half() {
    let h = play(&example1_nu_inf(), &[BETA; 10]);
    assert_eq!(h.total_reward(), 5.0);
    assert!(h.steps().iter().all(|s| s.percept.reward == Reward::HALF));
}

#[test]
fn three_alphas_separate_the_models() {
    for k in 1..=4 {
        let nu_k = example1_nu_k(k).unwrap();
        let prefix: Vec<_> = std::iter::repeat_n(BETA, k - 1)
            .chain([ALPHA, ALPHA, ALPHA])
            .collect();
        let unlocked = play(&nu_k, &prefix);
        let plain = play(&example1_nu_inf(), &prefix);
        assert_eq!(
            unlocked.steps().last().unwrap().percept.reward,
            Reward::ONE,
            "k = {k}"
        );
        assert_eq!(plain.steps().last().unwrap().percept.reward, Reward::ZERO);
        // two alphas leave the reward stream identical
        let two = &prefix[..prefix.len() - 1];
        let rewards = |h: &History| {
            h.steps()
                .iter()
                .map(|s| s.percept.reward)
                .collect::<Vec<_>>()
        };
        assert_eq!(
            rewards(&play(&nu_k, two)),
            rewards(&play(&example1_nu_inf(), two))
        );
    }
}

#[test]
fn exploring_falsifies_every_unlocked_member() {
    let class = Arc::new(make_example1_class(6).unwrap());
    let truth = example1_nu_inf();
    let h = play(&truth, &[BETA, BETA, BETA, ALPHA, ALPHA, ALPHA]);
    let mut b = BeliefState::new(class).unwrap();
    for s in h.steps() {
        b.update_in_place(s.action, s.percept).unwrap();
    }
    let w = b.posterior();
    // α at t = 4 unlocks ν_1..ν_4
    for (k, wk) in w.iter().enumerate().take(5).skip(1) {
        assert_eq!(*wk, 0.0, "ν_{k}");
    }
    assert!(w[5] > 0.0 && w[6] > 0.0);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn countable_class_keeps_a_tail_certificate() {
    let class = Arc::new(make_example1_countable_class());
    let truth = example1_nu_inf();
    let h = play(
        &truth,
        &[BETA, ALPHA, ALPHA, ALPHA, BETA, BETA, ALPHA, ALPHA, ALPHA],
    );
    let mut b = BeliefState::new(class).unwrap();
    for s in h.steps() {
        b.update_in_place(s.action, s.percept).unwrap();
    }
    assert!(b.tail_mass_bound() <= 1e-9);
    assert!(b.posterior_mass(&[0]).unwrap() > 0.5);
}

proptest! {
    #[test]
    fn unlocked_model_explores_iff_gamma_squared_exceeds_half(gamma in 0.05f64..0.95, k in 1usize..5) {
        prop_assume!((gamma * gamma - 0.5).abs() > 1e-3);
        let env: EnvRef = Arc::new(example1_nu_k(k).unwrap());
        let h = play(env.as_ref(), &vec![BETA; k - 1]);
        let d = Geometric::new(gamma).unwrap();
        let plan = optimal_plan(env.as_ref(), &d, &h, k + 200).unwrap();
        prop_assert_eq!(plan.root_action == ALPHA, gamma * gamma > 0.5);
    }

    #[test]
    fn percepts_are_known_rewards(actions in proptest::collection::vec(0usize..2, 0..20)) {
        let actions: Vec<_> = actions.into_iter().map(grl::interaction::Action).collect();
        let env = example1_nu_k(3).unwrap();
        let h = play(&env, &actions);
        let allowed = [Reward::ZERO, Reward::HALF, Reward::ONE];
        prop_assert!(h.steps().iter().all(|s| allowed.contains(&s.percept.reward)));
        prop_assert!(h.steps().iter().all(|s| env.alphabet().index_of(s.percept).is_some()));
    }
}
