//! Evaluation quantities: value gaps, the Bayes-expected total variation
//! `F`, undiscounted regret and the recoverability gap.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, Episode};
use crate::bayes::{BeliefState, EnvRef};
use crate::discount::{Discount, Window};
use crate::error::{Error, Result};
use crate::interaction::{EnvState, Environment, History, Policy, StateKey};
use crate::planner::{HistoryPolicy, Objective, OptimalPolicy, Planner, PolicyModel};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// A Monte-Carlo mean with its 95% normal-approximation half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::precondition(format!(
                "a confidence interval needs at least 2 samples, got {n}"
            )));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Estimate {
            mean,
            ci_halfwidth: Z95 * (var / n as f64).sqrt(),
            n,
        })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci_halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_halfwidth
    }

    /// Whether the whole interval lies strictly below `other`'s.
    pub fn separated_below(&self, other: &Estimate) -> bool {
        self.upper() < other.lower()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub t: usize,
    pub value: f64,
    /// Present exactly for Monte-Carlo estimates.
    pub ci_halfwidth: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub points: Vec<MetricPoint>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>) -> Self {
        MetricSeries {
            name: name.into(),
            points: Vec::new(),
        }
    }

    pub fn push(&mut self, point: MetricPoint) -> Result<()> {
        if self.points.last().is_some_and(|p| p.t >= point.t) {
            return Err(Error::precondition(format!(
                "series `{}`: t = {} is not increasing",
                self.name, point.t
            )));
        }
        self.points.push(point);
        Ok(())
    }
}

/// `V*_μ(h) - V^π_μ(h)`, both truncated at `m`, where `state` is `μ`'s
/// state after `h`.
pub fn value_gap_with(
    planner: &Planner,
    env: &dyn Environment,
    state: &EnvState,
    policy: &dyn PolicyModel,
    d: &dyn Discount,
    h: &History,
    m: usize,
) -> Result<f64> {
    let window = Window::new(d, h.time(), m);
    let best = planner
        .plan(env, state, h, &window, Objective::Max, None)?
        .root_value;
    let value = planner.evaluate(
        env,
        state,
        policy,
        &policy.initial_state(h)?,
        h,
        &window,
        None,
    )?;
    Ok(best - value)
}

pub fn value_gap(
    env: &dyn Environment,
    policy: &dyn Policy,
    d: &dyn Discount,
    h: &History,
    m: usize,
) -> Result<f64> {
    value_gap_with(
        &Planner::default(),
        env,
        &env.state_at(h),
        &HistoryPolicy(policy),
        d,
        h,
        m,
    )
}

/// `(1/Γ_t) Σ_{k=t}^{m} γ_k r_k` along a recorded trajectory of length at
/// least `m`.
pub fn discounted_return(d: &dyn Discount, history: &History, t: usize, m: usize) -> Result<f64> {
    if history.len() < m || t == 0 {
        return Err(Error::precondition(format!(
            "return over [{t}, {m}] needs {m} recorded steps, have {}",
            history.len()
        )));
    }
    let window = Window::new(d, t, m);
    Ok((t..=m)
        .map(|k| window.reward_weight(k) * history.steps()[k - 1].percept.reward.value())
        .sum())
}

/// Builds the agent for one seed.
pub type AgentFactory<'a> = dyn Fn(u64) -> Result<Box<dyn Agent>> + Sync + 'a;

/// `E[V*_μ(æ_{<t}) - V^{π}_μ(æ_{<t})]` over `æ_{<t} ~ μ^π`, truncated at `m`.
///
/// Each seed runs the agent to time `m`; its value from `æ_{<t}` is
/// estimated by the return it actually collects over `[t, m]`, so the agent's
/// own randomness (resampling included) is part of the measure.
pub fn expected_value_gap(
    env: &dyn Environment,
    make_agent: &AgentFactory<'_>,
    d: &dyn Discount,
    t: usize,
    m: usize,
    n_seeds: usize,
    base_seed: u64,
) -> Result<Estimate> {
    if n_seeds < 2 {
        return Err(Error::precondition(
            "expected value gap needs at least 2 seeds",
        ));
    }
    if t == 0 || m < t {
        return Err(Error::precondition(format!("invalid window [{t}, {m}]")));
    }
    let samples = (0..n_seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let mut agent = make_agent(seed)?;
            let mut ep = Episode::new(env, base_seed, seed);
            let mut best = 0.0;
            while ep.time() <= m {
                if ep.time() == t {
                    let window = Window::new(d, t, m);
                    best = Planner::default()
                        .plan(
                            env,
                            ep.env_state(),
                            ep.history(),
                            &window,
                            Objective::Max,
                            None,
                        )?
                        .root_value;
                }
                ep.step(agent.as_mut())?;
            }
            Ok(best - discounted_return(d, ep.history(), t, m)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Estimate::from_samples(&samples)
}

/// `F^π_m(h) = Σ_ν w(ν|h) D_m(ν^π, ξ^π | h)` over the enumerated front of
/// `belief`, where `h` is the belief's history. Members outside the front
/// change the true value by at most `2 · belief.tail_mass_bound()`.
pub fn bayes_expected_tv(
    planner: &Planner,
    belief: &BeliefState,
    policy: &dyn Policy,
    m: usize,
) -> Result<f64> {
    let h = belief.history();
    let (xi, xi_state) = belief.mixture()?;
    let mut total = 0.0;
    for (i, w) in belief.posterior().into_iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (env, state) = belief.member(i).expect("front member");
        total +=
            w * planner.tv_distance(env.as_ref(), state, policy, &xi, &xi_state, policy, h, m)?;
    }
    Ok(total)
}

/// `sup_π E[Σ_{t≤m} r_t]`: the environment's analytic value when it has
/// one, exact undiscounted expectimax otherwise.
pub fn optimal_reward_sum(planner: &Planner, env: &dyn Environment, m: usize) -> Result<f64> {
    match env.optimal_reward_sum(m) {
        Some(v) => Ok(v),
        None => exact_optimal_reward_sum(planner, env, m),
    }
}

pub fn exact_optimal_reward_sum(planner: &Planner, env: &dyn Environment, m: usize) -> Result<f64> {
    let window = Window::undiscounted(1, m);
    Ok(planner
        .plan(
            env,
            &env.initial_state(),
            &History::new(),
            &window,
            Objective::Max,
            None,
        )?
        .root_value)
}

/// `R_m(π, μ)` for a policy that can be evaluated exactly.
pub fn exact_regret(
    planner: &Planner,
    env: &dyn Environment,
    policy: &dyn PolicyModel,
    m: usize,
) -> Result<f64> {
    let h = History::new();
    let window = Window::undiscounted(1, m);
    let earned = planner.evaluate(
        env,
        &env.initial_state(),
        policy,
        &policy.initial_state(&h)?,
        &h,
        &window,
        None,
    )?;
    Ok(optimal_reward_sum(planner, env, m)? - earned)
}

/// Monte-Carlo `R_m` of an agent: the optimum minus the seed-mean reward sum.
pub fn regret(
    planner: &Planner,
    env: &dyn Environment,
    make_agent: &AgentFactory<'_>,
    m: usize,
    n_seeds: usize,
    base_seed: u64,
) -> Result<Estimate> {
    let best = optimal_reward_sum(planner, env, m)?;
    let samples = (0..n_seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let mut agent = make_agent(seed)?;
            let mut ep = Episode::new(env, base_seed, seed);
            while ep.time() <= m {
                ep.step(agent.as_mut())?;
            }
            Ok(best - ep.history().total_reward())
        })
        .collect::<Result<Vec<f64>>>()?;
    Estimate::from_samples(&samples)
}

/// `sup_π |E^{π*}[V*(æ_{<t})] - E^π[V*(æ_{<t})]|` with `V*` truncated at
/// `m`. The supremum is attained by a deterministic policy, so the largest
/// and smallest achievable `E^π[V*]` come from expectimax and expectimin
/// over the first `t - 1` cycles.
pub fn recoverability_gap(
    planner: &Planner,
    env: &EnvRef,
    d: &Arc<dyn Discount>,
    t: usize,
    m: usize,
) -> Result<f64> {
    if t == 0 || m < t {
        return Err(Error::precondition(format!("invalid window [{t}, {m}]")));
    }
    let cache: RefCell<HashMap<StateKey, f64>> = RefCell::new(HashMap::new());
    let v_star = |h: &History, state: &EnvState| -> Result<f64> {
        let key = env.key_of(state, h.time());
        if let Some(v) = key.as_ref().and_then(|k| cache.borrow().get(k).copied()) {
            return Ok(v);
        }
        let v = planner
            .plan(
                env.as_ref(),
                state,
                h,
                &Window::new(d.as_ref(), t, m),
                Objective::Max,
                None,
            )?
            .root_value;
        if let Some(k) = key {
            cache.borrow_mut().insert(k, v);
        }
        Ok(v)
    };
    // no rewards before t; only the value at t counts
    let prefix = Window {
        t0: 1,
        m: t - 1,
        reward: vec![0.0; t - 1],
        normalizer: vec![1.0; t],
    };
    let root = History::new();
    let init = env.initial_state();
    let hi = planner
        .plan(
            env.as_ref(),
            &init,
            &root,
            &prefix,
            Objective::Max,
            Some(&v_star),
        )?
        .root_value;
    let lo = planner
        .plan(
            env.as_ref(),
            &init,
            &root,
            &prefix,
            Objective::Min,
            Some(&v_star),
        )?
        .root_value;
    let pi_star = OptimalPolicy::new(env.clone(), d.clone(), m, *planner);
    let fixed = planner.evaluate(
        env.as_ref(),
        &init,
        &pi_star,
        &init,
        &root,
        &prefix,
        Some(&v_star),
    )?;
    Ok((fixed - lo).abs().max((hi - fixed).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentContext, AgentSpec, Schedule, ScheduledPolicy};
    use crate::bayes::EnvironmentClass;
    use crate::discount::{EpsilonSchedule, Geometric, SqrtExp};
    use crate::envs::{
        self, make_bernoulli_bandit, make_deterministic_bandit, RandomEnv, RandomPolicy, ALPHA,
        BETA,
    };
    use crate::interaction::{Action, Alphabet, FnPolicy, Percept, Reward};
    use proptest::prelude::*;

    fn geo(g: f64) -> Arc<dyn Discount> {
        Arc::new(Geometric::new(g).unwrap())
    }

    #[test]
    fn estimate_needs_two_samples() {
        assert!(Estimate::from_samples(&[1.0]).is_err());
        let e = Estimate::from_samples(&[1.0, 3.0]).unwrap();
        assert_eq!(e.mean, 2.0);
        assert!((e.ci_halfwidth - Z95 * 1.0).abs() < 1e-12);
    }

    #[test]
    fn series_times_increase() {
        let mut s = MetricSeries::new("gap");
        let p = |t| MetricPoint {
            t,
            value: 0.0,
            ci_halfwidth: None,
        };
        s.push(p(1)).unwrap();
        s.push(p(4)).unwrap();
        assert!(s.push(p(4)).is_err());
    }

    #[test]
    fn optimal_policy_has_no_gap() {
        let env: EnvRef = Arc::new(envs::example1_nu_k(3).unwrap());
        let d = geo(0.9);
        let pi = OptimalPolicy::new(env.clone(), d.clone(), 30, Planner::default());
        let gap = value_gap(env.as_ref(), &pi, d.as_ref(), &History::new(), 30).unwrap();
        assert!(gap.abs() < 1e-9);
    }

    #[test]
    fn zero_reward_environment_has_no_gap() {
        let env = make_bernoulli_bandit(&[0.0, 0.0]).unwrap();
        let pi = crate::interaction::UniformPolicy { num_actions: 2 };
        assert_eq!(
            value_gap(&env, &pi, geo(0.5).as_ref(), &History::new(), 10).unwrap(),
            0.0
        );
    }

    #[test]
    fn forced_second_alpha_costs_the_detour() {
        let env = envs::example1_nu_inf();
        let h = History::new().extended(ALPHA, Percept::new(0, Reward::ZERO));
        let pi = FnPolicy::new(2, |h: &History| if h.time() == 2 { ALPHA } else { BETA });
        for g in [0.5, 0.8, 0.9] {
            let d = geo(g);
            let m = 60;
            let trunc = d.ln_tail_ratio(2, m - 1).exp();
            let gap = value_gap(&env, &pi, d.as_ref(), &h, m).unwrap();
            assert!(gap >= (g - g * g) / 2.0 - 2.0 * trunc, "γ = {g}: {gap}");
        }
    }

    #[test]
    fn informed_agent_has_zero_expected_gap() {
        let truth: EnvRef = Arc::new(envs::example1_nu_inf());
        let d = geo(0.9);
        let make = |seed| {
            AgentSpec::Informed {
                eps_plan: EpsilonSchedule::default(),
            }
            .build(&AgentContext {
                class: None,
                truth: truth.clone(),
                discount: d.clone(),
                planner: Planner::default(),
                base_seed: 0,
                seed,
            })
        };
        let est = expected_value_gap(truth.as_ref(), &make, d.as_ref(), 8, 40, 4, 0).unwrap();
        assert!(est.mean.abs() < 1e-9 && est.ci_halfwidth < 1e-9);
        assert!(expected_value_gap(truth.as_ref(), &make, d.as_ref(), 8, 40, 1, 0).is_err());
    }

    fn constant(name: &str, r: Reward) -> EnvRef {
        Arc::new(make_deterministic_bandit(name, &[r], &[Reward::ZERO, Reward::ONE]).unwrap())
    }

    #[test]
    fn f_vanishes_for_indistinguishable_members() {
        let pi = crate::interaction::UniformPolicy { num_actions: 1 };
        let one = EnvironmentClass::finite("one", vec![(constant("a", Reward::ONE), 1.0)]).unwrap();
        let belief = BeliefState::new(Arc::new(one)).unwrap();
        assert_eq!(
            bayes_expected_tv(&Planner::default(), &belief, &pi, 3).unwrap(),
            0.0
        );
        let twins = EnvironmentClass::uniform(
            "twins",
            vec![constant("a", Reward::ONE), constant("b", Reward::ONE)],
        )
        .unwrap();
        let belief = BeliefState::new(Arc::new(twins)).unwrap();
        assert!(
            bayes_expected_tv(&Planner::default(), &belief, &pi, 3)
                .unwrap()
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn f_of_a_one_step_split_is_half() {
        let pi = crate::interaction::UniformPolicy { num_actions: 1 };
        let class = EnvironmentClass::uniform(
            "split",
            vec![constant("zero", Reward::ZERO), constant("one", Reward::ONE)],
        )
        .unwrap();
        let belief = BeliefState::new(Arc::new(class)).unwrap();
        let f = bayes_expected_tv(&Planner::default(), &belief, &pi, 1).unwrap();
        assert!((f - 0.5).abs() < 1e-12);
    }

    #[test]
    fn powers_of_two_regret() {
        let env = make_bernoulli_bandit(&[0.0, 1.0]).unwrap();
        let pi = ScheduledPolicy {
            schedule: Schedule::PowersOfTwo { on: 0, off: 1 },
            num_actions: 2,
        };
        let planner = Planner::default();
        assert!((exact_regret(&planner, &env, &pi, 8).unwrap() - 4.0).abs() < 1e-9);
        assert!((exact_regret(&planner, &env, &pi, 64).unwrap() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn analytic_optimum_matches_exact_planning() {
        let env = make_bernoulli_bandit(&[0.2, 0.65, 0.4]).unwrap();
        let planner = Planner::default();
        for m in 1..=8 {
            let exact = exact_optimal_reward_sum(&planner, &env, m).unwrap();
            assert!((exact - env.optimal_reward_sum(m).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn optimal_agent_regret_is_zero() {
        let env: EnvRef = Arc::new(make_bernoulli_bandit(&[0.0, 1.0]).unwrap());
        let d = geo(0.5);
        let make = |seed| {
            AgentSpec::Informed {
                eps_plan: EpsilonSchedule::default(),
            }
            .build(&AgentContext {
                class: None,
                truth: env.clone(),
                discount: d.clone(),
                planner: Planner::default(),
                base_seed: 0,
                seed,
            })
        };
        let est = regret(&Planner::default(), env.as_ref(), &make, 20, 8, 0).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn bandits_are_recoverable() {
        let env: EnvRef = Arc::new(make_bernoulli_bandit(&[0.3, 0.7]).unwrap());
        for t in 1..=5 {
            let gap = recoverability_gap(&Planner::default(), &env, &geo(0.7), t, t + 6).unwrap();
            assert!(gap.abs() < 1e-9, "t = {t}: {gap}");
        }
    }

    #[test]
    fn trap_is_not_recoverable() {
        let env: EnvRef = Arc::new(envs::make_trap_env());
        let d: Arc<dyn Discount> = Arc::new(SqrtExp::new());
        assert!(
            recoverability_gap(&Planner::default(), &env, &d, 1, 8)
                .unwrap()
                .abs()
                < 1e-12
        );
        for t in 2..=6 {
            // V* is truncated at m, so take m past the point where the tail matters
            let m = t + crate::discount::effective_horizon(d.as_ref(), t, 1e-12).unwrap();
            let gap = recoverability_gap(&Planner::default(), &env, &d, t, m).unwrap();
            assert!((gap - 1.0).abs() < 1e-9, "t = {t}: {gap}");
        }
    }

    #[test]
    fn discounted_return_needs_the_window() {
        let h = History::new().extended(Action(0), Percept::reward_only(Reward::ONE));
        assert!(discounted_return(geo(0.5).as_ref(), &h, 1, 2).is_err());
        assert!((discounted_return(geo(0.5).as_ref(), &h, 1, 1).unwrap() - 0.5).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn regret_is_nonnegative(seed in any::<u64>(), m in 1usize..5) {
            let alphabet = Alphabet::new(2, 2, vec![Reward::ZERO, Reward::HALF, Reward::ONE]).unwrap();
            let env = RandomEnv::new(seed, alphabet, Some(3), 0.2);
            let pi = HistoryPolicy(RandomPolicy::new(seed ^ 7, 2, false));
            let r = exact_regret(&Planner::default(), &env, &pi, m).unwrap();
            prop_assert!(r >= -1e-9);
        }

        #[test]
        fn recoverability_gap_is_in_unit_interval(seed in any::<u64>(), t in 1usize..4) {
            let alphabet = Alphabet::new(2, 2, vec![Reward::ZERO, Reward::ONE]).unwrap();
            let env: EnvRef = Arc::new(RandomEnv::new(seed, alphabet, Some(3), 0.3));
            let gap = recoverability_gap(&Planner::default(), &env, &geo(0.6), t, t + 3).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&gap));
        }
    }
}
