//! The property suite behind `grl-lab verify`.

use std::collections::HashMap;
use std::sync::Arc;

use grl::agents::{Schedule, ScheduledPolicy};
use grl::bayes::{BeliefState, EnvRef, EnvironmentClass, MixtureEnvironment};
use grl::discount::{
    check_assumption_gamma, effective_horizon, lemma3_weights, tail_ratio_bound, AssumptionItem,
    Discount, Geometric, SqrtExp, Table, Window,
};
use grl::envs::{self, RandomEnv, RandomPolicy};
use grl::interaction::{
    enumerate_histories, is_distribution, joint_probability, rollout, Alphabet, Environment,
    History, Reward, DEFAULT_ENUMERATION_CAP,
};
use grl::metrics;
use grl::planner::{value_of_policy, HistoryPolicy, Objective, Planner};

pub type Check = fn() -> Result<(), String>;

pub struct Property {
    pub name: &'static str,
    pub description: &'static str,
    pub check: Check,
}

pub struct Outcome {
    pub name: &'static str,
    /// `Err` holds a counterexample.
    pub result: Result<(), String>,
}

pub fn properties() -> Vec<Property> {
    let p = |name, description, check| Property {
        name,
        description,
        check,
    };
    vec![
        p(
            "gamma_recursion",
            "Γ_t = γ_t + Γ_{t+1} for the built-in schedules",
            check_gamma_recursion as Check,
        ),
        p(
            "effective_horizon_minimal",
            "H_t(ε) is the first k with Γ_{t+k}/Γ_t ≤ ε",
            check_horizon_minimal,
        ),
        p(
            "horizon_weights_constraint",
            "Σ_{k=t0}^{t} b_k γ_t/Γ_k = 1",
            check_weights_constraint,
        ),
        p(
            "horizon_weights_total",
            "Σ b_t = Γ_{m+1}/γ_m + m - t0 + 1",
            check_weights_total,
        ),
        p(
            "horizon_mass_bound",
            "γ_t H_t(ε)/Γ_t ≥ 1 - ε",
            check_horizon_mass,
        ),
        p(
            "assumption_standard_schedules",
            "geometric and sqrt_exp satisfy the discount assumption to 2^14",
            check_assumption,
        ),
        p(
            "assumption_zero_discount_fixture",
            "a schedule with γ_5 = 0 fails positivity",
            check_assumption_fixture,
        ),
        p(
            "percept_distributions",
            "every registered environment predicts distributions",
            check_distributions,
        ),
        p(
            "state_key_equivalence",
            "equal state keys give equal one-step predictions",
            check_state_keys,
        ),
        p(
            "joint_measure_normalized",
            "ν^π sums to 1 over all continuations",
            check_joint_measure,
        ),
        p(
            "value_tv_bound",
            "|V^{π1}_ν - V^{π2}_ρ| ≤ D_m on random instances",
            check_value_tv_bound,
        ),
        p(
            "posterior_martingale",
            "E_ξ[w(ν|h a e)] = w(ν|h)",
            check_martingale,
        ),
        p("mixture_dominance", "ξ(h) ≥ w(ν) ν(h)", check_dominance),
        p(
            "memo_matches_tree",
            "memoized and unmemoized expectimax agree",
            check_memo,
        ),
        p(
            "regret_nonnegative",
            "exact regret of random policies is nonnegative",
            check_regret_nonnegative,
        ),
        p(
            "powers_of_two_regret",
            "bad arm at powers of two: R_m = ⌊log2 m⌋ + 1",
            check_powers_of_two,
        ),
        p(
            "recoverability_examples",
            "bandits recover, the trap does not",
            check_recoverability,
        ),
    ]
}

/// Runs every property whose name contains `filter`.
pub fn verify(filter: Option<&str>) -> Vec<Outcome> {
    properties()
        .into_iter()
        .filter(|p| filter.is_none_or(|f| p.name.contains(f)))
        .map(|p| Outcome {
            name: p.name,
            result: (p.check)(),
        })
        .collect()
}

fn schedules() -> Vec<(String, Arc<dyn Discount>)> {
    vec![
        (
            "geometric(0.5)".into(),
            Arc::new(Geometric::new(0.5).expect("valid")) as Arc<dyn Discount>,
        ),
        (
            "geometric(0.9)".into(),
            Arc::new(Geometric::new(0.9).expect("valid")),
        ),
        ("sqrt_exp".into(), Arc::new(SqrtExp::new())),
    ]
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

/// Checks `Γ_t = γ_t + Γ_{t+1}` in relative form for `t ≤ t_max`; the
/// witness is the first failing `t`.
pub fn gamma_recursion(d: &dyn Discount, t_max: usize) -> Result<(), String> {
    for t in 1..=t_max {
        let tail = d.ln_tail(t);
        if tail == f64::NEG_INFINITY {
            if d.ln_gamma(t) != f64::NEG_INFINITY || d.ln_tail(t + 1) != f64::NEG_INFINITY {
                return Err(format!(
                    "{}: t = {t}: Γ_t = 0 but γ_t or Γ_(t+1) positive",
                    d.name()
                ));
            }
            continue;
        }
        let sum = (d.ln_gamma(t) - tail).exp() + (d.ln_tail(t + 1) - tail).exp();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!(
                "{}: t = {t}: (γ_t + Γ_(t+1))/Γ_t = {sum}",
                d.name()
            ));
        }
    }
    Ok(())
}

fn check_gamma_recursion() -> Result<(), String> {
    schedules()
        .iter()
        .try_for_each(|(_, d)| gamma_recursion(d.as_ref(), 2000))
}

fn check_horizon_minimal() -> Result<(), String> {
    for (name, d) in schedules() {
        for t in [1, 2, 5, 17, 100, 1000] {
            for eps in [0.5, 0.25, 0.1, 0.01, 1e-3] {
                let h = effective_horizon(d.as_ref(), t, eps).map_err(|e| e.to_string())?;
                let ratio = |k: usize| d.ln_tail_ratio(t, k).exp();
                if ratio(h) > eps * (1.0 + 1e-9) || (h > 0 && ratio(h - 1) <= eps * (1.0 - 1e-9)) {
                    return Err(format!(
                        "{name}: t = {t}, ε = {eps}: H = {h} is not minimal"
                    ));
                }
            }
        }
    }
    Ok(())
}

fn check_weights_constraint() -> Result<(), String> {
    for (name, d) in schedules() {
        for t0 in 1..=5 {
            let m = 60;
            let b = lemma3_weights(d.as_ref(), t0, m).map_err(|e| e.to_string())?;
            for t in t0..=m {
                let sum: f64 = (t0..=t)
                    .map(|k| b[k - t0] * (d.ln_gamma(t) - d.ln_tail(k)).exp())
                    .sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(format!("{name}: t0 = {t0}, t = {t}: sum = {sum}"));
                }
            }
        }
    }
    Ok(())
}

fn check_weights_total() -> Result<(), String> {
    for (name, d) in schedules() {
        for t0 in 1..=5 {
            for m in t0..=60 {
                let b = lemma3_weights(d.as_ref(), t0, m).map_err(|e| e.to_string())?;
                let total: f64 = b.iter().sum();
                let expected = (d.ln_tail(m + 1) - d.ln_gamma(m)).exp() + (m - t0 + 1) as f64;
                if !close(total, expected, 1e-9) {
                    return Err(format!("{name}: t0 = {t0}, m = {m}: {total} vs {expected}"));
                }
            }
        }
    }
    Ok(())
}

fn check_horizon_mass() -> Result<(), String> {
    for (name, d) in schedules() {
        for t in 1..=60 {
            for eps in [0.1, 0.25, 0.5] {
                let v = tail_ratio_bound(d.as_ref(), t, eps).map_err(|e| e.to_string())?;
                if v < 1.0 - eps - 1e-9 {
                    return Err(format!("{name}: t = {t}, ε = {eps}: {v}"));
                }
            }
        }
    }
    Ok(())
}

const ASSUMPTION_EPS: [f64; 4] = [0.5, 0.25, 0.1, 0.01];

fn check_assumption() -> Result<(), String> {
    for (name, d) in [schedules().swap_remove(0), schedules().swap_remove(2)] {
        let report = check_assumption_gamma(d.as_ref(), 1 << 14, &ASSUMPTION_EPS);
        if let Some(v) = report.violations.first() {
            return Err(format!("{name}: {:?} at t = {}: {}", v.item, v.t, v.detail));
        }
    }
    Ok(())
}

/// A discount with `γ_5 = 0`.
pub fn zero_at_five() -> Table {
    Table::new(vec![0.5, 0.25, 0.125, 0.0625, 0.0, 0.02], 0.5).expect("valid table")
}

fn check_assumption_fixture() -> Result<(), String> {
    let report = check_assumption_gamma(&zero_at_five(), 64, &ASSUMPTION_EPS);
    match report.first(AssumptionItem::Positive) {
        Some(v) if v.t == 5 => Ok(()),
        Some(v) => Err(format!("positivity flagged at t = {} instead of 5", v.t)),
        None => Err("positivity violation not detected".into()),
    }
}

fn registered_envs() -> Vec<EnvRef> {
    let mut out: Vec<EnvRef> = vec![
        Arc::new(envs::example1_nu_inf()),
        Arc::new(envs::make_trap_env()),
        Arc::new(envs::make_bernoulli_bandit(&[0.2, 0.9]).expect("valid")),
    ];
    for k in 1..=4 {
        out.push(Arc::new(envs::example1_nu_k(k).expect("valid")));
    }
    let discussion =
        envs::make_discussion_bandit_class(3, Reward::new(1, 20).expect("valid")).expect("valid");
    out.extend((0..3).map(|i| discussion.member(i).expect("member")));
    let alphabet =
        Alphabet::new(2, 2, vec![Reward::ZERO, Reward::HALF, Reward::ONE]).expect("valid");
    out.extend(
        (0..4).map(|s| Arc::new(RandomEnv::new(s, alphabet.clone(), Some(3), 0.3)) as EnvRef),
    );
    out
}

fn check_distributions() -> Result<(), String> {
    for env in registered_envs() {
        let n = env.alphabet().num_actions();
        for seed in 0..5 {
            let h = rollout(env.as_ref(), &RandomPolicy::new(seed, n, false), 12, seed)
                .map_err(|e| e.to_string())?;
            for len in 0..=h.len() {
                let prefix = h.prefix(len);
                for a in env.alphabet().actions() {
                    let p = env.percept_distribution(&prefix, a);
                    if !is_distribution(&p, 1e-12) || p.len() != env.alphabet().num_percepts() {
                        return Err(format!(
                            "{}: after {len} steps, action {a}: {p:?}",
                            env.name()
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_state_keys() -> Result<(), String> {
    for env in registered_envs() {
        let n = env.alphabet().num_actions();
        let mut seen: HashMap<(usize, Vec<u64>), (History, Vec<Vec<f64>>)> = HashMap::new();
        for seed in 0..40 {
            let h = rollout(env.as_ref(), &RandomPolicy::new(seed, n, false), 10, seed)
                .map_err(|e| e.to_string())?;
            for len in 0..=h.len() {
                let prefix = h.prefix(len);
                let Some(key) = env.state_key(&prefix) else {
                    continue;
                };
                let preds: Vec<Vec<f64>> = env
                    .alphabet()
                    .actions()
                    .map(|a| env.percept_distribution(&prefix, a))
                    .collect();
                let t = prefix.time();
                match seen.get(&(t, key.0.clone())) {
                    Some((other, p)) if p != &preds => {
                        return Err(format!(
                            "{}: t = {t}: {:?} and {:?} share a key but differ",
                            env.name(),
                            other.steps(),
                            prefix.steps()
                        ));
                    }
                    Some(_) => {}
                    None => {
                        seen.insert((t, key.0), (prefix, preds));
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_joint_measure() -> Result<(), String> {
    for env in registered_envs() {
        let n = env.alphabet().num_actions();
        let policy = RandomPolicy::new(3, n, false);
        let all = enumerate_histories(
            env.as_ref(),
            &policy,
            &History::new(),
            3,
            DEFAULT_ENUMERATION_CAP,
        )
        .map_err(|e| e.to_string())?;
        let total: f64 = all.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("{}: total mass {total}", env.name()));
        }
        for (h, p) in all.iter().take(20) {
            let direct = joint_probability(env.as_ref(), &policy, h).map_err(|e| e.to_string())?;
            if (direct - p).abs() > 1e-12 {
                return Err(format!("{}: {:?}: {direct} vs {p}", env.name(), h.steps()));
            }
        }
    }
    Ok(())
}

/// A random environment with `|A| ≤ 3`, `|E| ≤ 3`.
pub fn small_random_env(seed: u64) -> RandomEnv {
    let actions = 1 + (seed % 3) as usize;
    let levels = [
        vec![Reward::ZERO, Reward::ONE],
        vec![Reward::ZERO, Reward::HALF, Reward::ONE],
    ][(seed / 3 % 2) as usize]
        .clone();
    let alphabet = Alphabet::new(actions, 1, levels).expect("valid alphabet");
    let states = if seed % 5 == 0 {
        None
    } else {
        Some(2 + seed % 3)
    };
    RandomEnv::new(seed, alphabet, states, 0.25)
}

fn check_value_tv_bound() -> Result<(), String> {
    for i in 0..120u64 {
        let nu = small_random_env(i);
        let rho = RandomEnv::new(i ^ 0xabcd, nu.alphabet().clone(), Some(3), 0.25);
        let n = nu.alphabet().num_actions();
        let (p1, p2) = (
            RandomPolicy::new(i ^ 1, n, i % 2 == 0),
            RandomPolicy::new(i ^ 2, n, false),
        );
        let d = Geometric::new(0.3 + 0.6 * ((i % 7) as f64 / 7.0)).expect("valid");
        let m = 1 + (i % 4) as usize;
        let h = History::new();
        let err = |e: grl::Error| e.to_string();
        let v1 = value_of_policy(&nu, &p1, &d, &h, m).map_err(err)?;
        let v2 = value_of_policy(&rho, &p2, &d, &h, m).map_err(err)?;
        let dm = grl::planner::tv_distance(&nu, &p1, &rho, &p2, &h, m).map_err(err)?;
        if (v1 - v2).abs() > dm + 1e-9 {
            return Err(format!("instance {i}: |{v1} - {v2}| > D_m = {dm}"));
        }
    }
    Ok(())
}

fn random_class(seed: u64, size: usize) -> Result<EnvironmentClass, String> {
    let alphabet =
        Alphabet::new(2, 1, vec![Reward::ZERO, Reward::HALF, Reward::ONE]).expect("valid");
    envs::make_random_class(seed, size, &alphabet, Some(3), 0.0).map_err(|e| e.to_string())
}

fn check_martingale() -> Result<(), String> {
    let err = |e: grl::Error| e.to_string();
    for seed in 0..30u64 {
        let class = Arc::new(random_class(seed, 4)?);
        let truth = class.member((seed % 4) as usize).expect("member");
        let len = (seed % 5) as usize;
        let h = rollout(
            truth.as_ref(),
            &RandomPolicy::new(seed, 2, false),
            len,
            seed,
        )
        .map_err(err)?;
        let mut belief = BeliefState::new(class.clone()).map_err(err)?;
        for s in h.steps() {
            belief.update_in_place(s.action, s.percept).map_err(err)?;
        }
        let w = belief.posterior();
        for a in class.alphabet().actions() {
            let xi = belief.mixture_predict(a).map_err(err)?;
            let mut expected = vec![0.0; w.len()];
            for (ei, &p) in xi.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let next = belief
                    .update(a, class.alphabet().percept(ei))
                    .map_err(err)?
                    .posterior();
                for (x, y) in expected.iter_mut().zip(next) {
                    *x += p * y;
                }
            }
            if let Some(i) = (0..w.len()).find(|&i| (expected[i] - w[i]).abs() > 1e-9) {
                return Err(format!(
                    "seed {seed}, |h| = {len}, action {a}, member {i}: {} vs {}",
                    expected[i], w[i]
                ));
            }
        }
    }
    Ok(())
}

fn check_dominance() -> Result<(), String> {
    let err = |e: grl::Error| e.to_string();
    for seed in 0..30u64 {
        let class = random_class(seed, 4)?;
        let members: Vec<(EnvRef, f64)> = (0..4)
            .map(|i| (class.member(i).expect("member"), class.prior(i)))
            .collect();
        let xi = MixtureEnvironment::new("xi", members.clone()).map_err(err)?;
        let policy = RandomPolicy::new(seed, 2, false);
        let h = rollout(members[1].0.as_ref(), &policy, 10, seed).map_err(err)?;
        let p_xi = joint_probability(&xi, &policy, &h).map_err(err)?;
        for (i, (env, w)) in members.iter().enumerate() {
            let p = joint_probability(env.as_ref(), &policy, &h).map_err(err)?;
            if p_xi < w * p * (1.0 - 1e-12) {
                return Err(format!("seed {seed}, member {i}: ξ = {p_xi} < {}", w * p));
            }
        }
    }
    Ok(())
}

fn check_memo() -> Result<(), String> {
    let err = |e: grl::Error| e.to_string();
    for seed in 0..40u64 {
        let env = small_random_env(seed);
        let d = Geometric::new(0.7).expect("valid");
        let h = History::new();
        let window = Window::new(&d, 1, 4);
        let state = env.initial_state();
        let a = Planner::default()
            .plan(&env, &state, &h, &window, Objective::Max, None)
            .map_err(err)?;
        let b = Planner::default()
            .unmemoized()
            .plan(&env, &state, &h, &window, Objective::Max, None)
            .map_err(err)?;
        if (a.root_value - b.root_value).abs() > 1e-12 || a.root_action != b.root_action {
            return Err(format!("seed {seed}: {} vs {}", a.root_value, b.root_value));
        }
    }
    Ok(())
}

fn check_regret_nonnegative() -> Result<(), String> {
    for seed in 0..40u64 {
        let env = small_random_env(seed);
        let policy = HistoryPolicy(RandomPolicy::new(
            seed ^ 9,
            env.alphabet().num_actions(),
            seed % 2 == 1,
        ));
        let r = metrics::exact_regret(&Planner::default(), &env, &policy, 4)
            .map_err(|e| e.to_string())?;
        if r < -1e-9 {
            return Err(format!("seed {seed}: R_4 = {r}"));
        }
    }
    Ok(())
}

fn check_powers_of_two() -> Result<(), String> {
    let env = envs::make_bernoulli_bandit(&[0.0, 1.0]).map_err(|e| e.to_string())?;
    let policy = ScheduledPolicy {
        schedule: Schedule::PowersOfTwo { on: 0, off: 1 },
        num_actions: 2,
    };
    for m in [1, 2, 3, 8, 64, 1024] {
        let r = metrics::exact_regret(&Planner::default(), &env, &policy, m)
            .map_err(|e| e.to_string())?;
        let expected = (m.ilog2() + 1) as f64;
        if (r - expected).abs() > 1e-9 {
            return Err(format!("m = {m}: R = {r}, expected {expected}"));
        }
    }
    Ok(())
}

fn check_recoverability() -> Result<(), String> {
    let err = |e: grl::Error| e.to_string();
    let d: Arc<dyn Discount> = Arc::new(Geometric::new(0.5).expect("valid"));
    let planner = Planner::default();
    let bandit: EnvRef = Arc::new(envs::make_bernoulli_bandit(&[0.3, 0.8]).map_err(err)?);
    let trap: EnvRef = Arc::new(envs::make_trap_env());
    for t in 1..=6 {
        let m = t + 45;
        let g = metrics::recoverability_gap(&planner, &bandit, &d, t, m).map_err(err)?;
        if g.abs() > 1e-9 {
            return Err(format!("bandit, t = {t}: gap {g}"));
        }
        let g = metrics::recoverability_gap(&planner, &trap, &d, t, m).map_err(err)?;
        let expected = if t == 1 { 0.0 } else { 1.0 };
        if (g - expected).abs() > 1e-9 {
            return Err(format!("trap, t = {t}: gap {g}, expected {expected}"));
        }
    }
    Ok(())
}
