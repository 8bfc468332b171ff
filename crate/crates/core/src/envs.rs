//! Concrete environments and environment classes.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bayes::{EnvRef, EnvironmentClass};
use crate::error::{Error, Result};
use crate::interaction::{
    one_hot, Action, Alphabet, EnvState, Environment, History, Percept, Policy, Reward, StateKey,
};

/// Percepts drawn independently for each action from a fixed distribution.
#[derive(Clone, Debug)]
pub struct StatelessEnv {
    name: String,
    alphabet: Alphabet,
    dists: Vec<Vec<f64>>,
}

impl StatelessEnv {
    pub fn new(name: impl Into<String>, alphabet: Alphabet, dists: Vec<Vec<f64>>) -> Result<Self> {
        if dists.len() != alphabet.num_actions() {
            return Err(Error::spec("one percept distribution per action required"));
        }
        for d in &dists {
            if d.len() != alphabet.num_percepts() || !crate::interaction::is_distribution(d, 1e-12)
            {
                return Err(Error::spec(format!("invalid percept distribution {d:?}")));
            }
        }
        Ok(StatelessEnv {
            name: name.into(),
            alphabet,
            dists,
        })
    }

    pub fn expected_reward(&self, action: Action) -> f64 {
        let r = self.alphabet.reward_values();
        self.dists[action.0]
            .iter()
            .zip(&r)
            .map(|(p, r)| p * r)
            .sum()
    }
}

impl Environment for StatelessEnv {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn initial_state(&self) -> EnvState {
        EnvState::Node(0)
    }

    fn predict(&self, _state: &EnvState, _t: usize, action: Action) -> Vec<f64> {
        self.dists[action.0].clone()
    }

    fn advance(&self, _state: &mut EnvState, _t: usize, _action: Action, _percept: Percept) {}

    fn key_of(&self, _state: &EnvState, _t: usize) -> Option<StateKey> {
        Some(StateKey(Vec::new()))
    }

    fn optimal_reward_sum(&self, m: usize) -> Option<f64> {
        let best = self
            .alphabet
            .actions()
            .map(|a| self.expected_reward(a))
            .fold(f64::NEG_INFINITY, f64::max);
        Some(m as f64 * best)
    }
}

/// Arm `i` pays 1 with probability `means[i]` and 0 otherwise.
pub fn make_bernoulli_bandit(means: &[f64]) -> Result<StatelessEnv> {
    if means.is_empty() {
        return Err(Error::spec("bandit needs at least one arm"));
    }
    if let Some(m) = means.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::spec(format!("arm mean {m} outside [0, 1]")));
    }
    let alphabet = Alphabet::rewards_only(means.len(), vec![Reward::ZERO, Reward::ONE])?;
    let dists = means.iter().map(|&p| vec![1.0 - p, p]).collect();
    StatelessEnv::new(format!("bernoulli{means:?}"), alphabet, dists)
}

/// Arm `i` always pays `payoffs[i]`; every payoff must be one of `levels`.
pub fn make_deterministic_bandit(
    name: impl Into<String>,
    payoffs: &[Reward],
    levels: &[Reward],
) -> Result<StatelessEnv> {
    let alphabet = Alphabet::rewards_only(payoffs.len(), levels.to_vec())?;
    let dists = payoffs
        .iter()
        .map(|&r| {
            alphabet
                .index_of(Percept::reward_only(r))
                .map(|i| one_hot(alphabet.num_percepts(), i))
                .ok_or_else(|| Error::spec(format!("payoff {r} not among declared levels")))
        })
        .collect::<Result<_>>()?;
    StatelessEnv::new(name, alphabet, dists)
}

/// `n` deterministic `(n+1)`-armed bandits under a uniform prior. Bandit `i`
/// (1-based) pays `1 - eps` on arm 0, 1 on arm `i`, and 0 elsewhere.
pub fn make_discussion_bandit_class(n: usize, eps: Reward) -> Result<EnvironmentClass> {
    if n == 0 {
        return Err(Error::spec("discussion class needs n ≥ 1"));
    }
    if eps == Reward::ZERO || eps == Reward::ONE {
        return Err(Error::spec("discussion class needs 0 < ε < 1"));
    }
    let safe = eps.complement();
    let levels = [Reward::ZERO, safe, Reward::ONE];
    let mut members: Vec<(EnvRef, f64)> = Vec::with_capacity(n);
    for i in 1..=n {
        let mut payoffs = vec![Reward::ZERO; n + 1];
        payoffs[0] = safe;
        payoffs[i] = Reward::ONE;
        let env = make_deterministic_bandit(format!("bandit{i}"), &payoffs, &levels)?;
        members.push((Arc::new(env), 1.0 / n as f64));
    }
    EnvironmentClass::finite(format!("discussion{{n={n},eps={eps}}}"), members)
}

/// Serializable description of a deterministic finite automaton whose
/// transitions may depend on the global time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutomatonSpec {
    pub name: String,
    pub num_actions: usize,
    /// Declared reward levels.
    pub rewards: Vec<Reward>,
    pub initial: String,
    pub states: Vec<StateSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    pub name: String,
    #[serde(default)]
    pub observation: u32,
    pub transitions: Vec<TransitionSpec>,
}

/// A transition taken from the enclosing state. Omitting `action` matches
/// every action; `min_time`/`max_time` restrict the times at which it
/// applies (inclusive).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<usize>,
    pub next: String,
    pub reward: Reward,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_time: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_time: Option<usize>,
}

impl AutomatonSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::spec(format!("automaton spec: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("automaton spec serializes")
    }
}

#[derive(Clone, Debug)]
struct Edge {
    lo: usize,
    hi: usize,
    next: usize,
    percept: usize,
}

#[derive(Clone, Debug)]
pub struct FiniteAutomaton {
    spec: AutomatonSpec,
    alphabet: Alphabet,
    initial: usize,
    // edges[state][action], sorted by `lo`, covering [1, ∞)
    edges: Vec<Vec<Vec<Edge>>>,
    // from this time on no guard changes
    settle_time: usize,
}

impl FiniteAutomaton {
    pub fn new(spec: AutomatonSpec) -> Result<Self> {
        if spec.states.is_empty() {
            return Err(Error::spec("automaton has no states"));
        }
        let num_observations =
            spec.states.iter().map(|s| s.observation).max().unwrap_or(0) as usize + 1;
        let alphabet = Alphabet::new(spec.num_actions, num_observations, spec.rewards.clone())?;
        let index: HashMap<&str, usize> = spec
            .states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        if index.len() != spec.states.len() {
            return Err(Error::spec("duplicate state names"));
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::spec(format!("unknown state `{name}`")))
        };
        let initial = lookup(&spec.initial)?;
        let mut edges = vec![vec![Vec::new(); spec.num_actions]; spec.states.len()];
        let mut settle_time = 1;
        for (s, state) in spec.states.iter().enumerate() {
            for tr in &state.transitions {
                let next = lookup(&tr.next)?;
                let observation = spec.states[next].observation;
                let percept = alphabet
                    .index_of(Percept::new(observation, tr.reward))
                    .ok_or_else(|| {
                        Error::spec(format!("reward {} is not a declared level", tr.reward))
                    })?;
                let lo = tr.min_time.unwrap_or(1).max(1);
                let hi = tr.max_time.unwrap_or(usize::MAX);
                if hi < lo {
                    return Err(Error::spec(format!("empty time guard on `{}`", state.name)));
                }
                settle_time = settle_time.max(lo);
                if hi != usize::MAX {
                    settle_time = settle_time.max(hi + 1);
                }
                let actions = match tr.action {
                    Some(a) if a >= spec.num_actions => {
                        return Err(Error::spec(format!(
                            "action {a} out of range in `{}`",
                            state.name
                        )))
                    }
                    Some(a) => a..a + 1,
                    None => 0..spec.num_actions,
                };
                for a in actions {
                    edges[s][a].push(Edge {
                        lo,
                        hi,
                        next,
                        percept,
                    });
                }
            }
            for (a, list) in edges[s].iter_mut().enumerate() {
                list.sort_by_key(|e| e.lo);
                let mut expect = 1usize;
                for e in list.iter() {
                    if e.lo != expect {
                        return Err(Error::spec(format!(
                            "transitions of `{}` on action {a} do not cover time {expect} exactly once",
                            state.name
                        )));
                    }
                    expect = e.hi.saturating_add(1);
                }
                if expect != usize::MAX {
                    return Err(Error::spec(format!(
                        "transitions of `{}` on action {a} are not total",
                        state.name
                    )));
                }
            }
        }
        Ok(FiniteAutomaton {
            spec,
            alphabet,
            initial,
            edges,
            settle_time,
        })
    }

    pub fn spec(&self) -> &AutomatonSpec {
        &self.spec
    }

    pub fn state_name(&self, state: &EnvState) -> &str {
        &self.spec.states[Self::node(state)].name
    }

    fn node(state: &EnvState) -> usize {
        match state {
            EnvState::Node(s) => *s as usize,
            other => panic!("automaton given foreign state {other:?}"),
        }
    }

    fn edge(&self, state: usize, t: usize, action: Action) -> &Edge {
        let list = &self.edges[state][action.0];
        list.iter()
            .find(|e| e.lo <= t && t <= e.hi)
            .expect("transitions are total")
    }
}

impl Environment for FiniteAutomaton {
    fn name(&self) -> String {
        self.spec.name.clone()
    }

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn initial_state(&self) -> EnvState {
        EnvState::Node(self.initial as u64)
    }

    fn predict(&self, state: &EnvState, t: usize, action: Action) -> Vec<f64> {
        let e = self.edge(Self::node(state), t, action);
        one_hot(self.alphabet.num_percepts(), e.percept)
    }

    fn advance(&self, state: &mut EnvState, t: usize, action: Action, _percept: Percept) {
        let e = self.edge(Self::node(state), t, action);
        *state = EnvState::Node(e.next as u64);
    }

    fn key_of(&self, state: &EnvState, t: usize) -> Option<StateKey> {
        Some(StateKey(vec![
            Self::node(state) as u64,
            t.min(self.settle_time) as u64,
        ]))
    }
}

/// Action `α` in the `ν_∞`/`ν_k` environments.
pub const ALPHA: Action = Action(0);
/// Action `β` in the `ν_∞`/`ν_k` environments.
pub const BETA: Action = Action(1);

fn example1_spec(unlock: Option<usize>) -> AutomatonSpec {
    let tr = |action: Option<usize>, next: &str, reward: Reward| TransitionSpec {
        action,
        next: next.into(),
        reward,
        min_time: None,
        max_time: None,
    };
    let (a, b) = (Some(ALPHA.0), Some(BETA.0));
    let s0 = match unlock {
        None => vec![tr(b, "s0", Reward::HALF), tr(a, "s1", Reward::ZERO)],
        Some(k) => {
            let mut v = vec![tr(b, "s0", Reward::HALF)];
            if k > 1 {
                v.push(TransitionSpec {
                    max_time: Some(k - 1),
                    ..tr(a, "s1", Reward::ZERO)
                });
            }
            v.push(TransitionSpec {
                min_time: Some(k),
                ..tr(a, "s3", Reward::ZERO)
            });
            v
        }
    };
    let mut states = vec![
        StateSpec {
            name: "s0".into(),
            observation: 0,
            transitions: s0,
        },
        StateSpec {
            name: "s1".into(),
            observation: 0,
            transitions: vec![tr(b, "s0", Reward::ZERO), tr(a, "s2", Reward::ZERO)],
        },
        StateSpec {
            name: "s2".into(),
            observation: 0,
            transitions: vec![tr(None, "s0", Reward::ZERO)],
        },
    ];
    if unlock.is_some() {
        states.push(StateSpec {
            name: "s3".into(),
            observation: 0,
            transitions: vec![tr(a, "s4", Reward::ZERO), tr(b, "s0", Reward::ZERO)],
        });
        states.push(StateSpec {
            name: "s4".into(),
            observation: 0,
            transitions: vec![tr(a, "s4", Reward::ONE), tr(b, "s2", Reward::ZERO)],
        });
    }
    AutomatonSpec {
        name: match unlock {
            None => "nu_inf".into(),
            Some(k) => format!("nu_{k}"),
        },
        num_actions: 2,
        rewards: vec![Reward::ZERO, Reward::HALF, Reward::ONE],
        initial: "s0".into(),
        states,
    }
}

/// `ν_∞`: `β` pays 1/2 forever, detours through `α` pay nothing.
pub fn example1_nu_inf() -> FiniteAutomaton {
    FiniteAutomaton::new(example1_spec(None)).expect("valid automaton")
}

/// `ν_k`: like `ν_∞`, except that from time `k` on, `α` from `s0` leads to
/// a state where repeating `α` pays 1 forever.
pub fn example1_nu_k(k: usize) -> Result<FiniteAutomaton> {
    if k == 0 {
        return Err(Error::spec("ν_k needs k ≥ 1"));
    }
    FiniteAutomaton::new(example1_spec(Some(k)))
}

/// `{ν_∞, ν_1..ν_K}` with `w(ν_∞) = 1/2` and `w(ν_k) ∝ 2^{-k}` summing to 1/2.
/// Member 0 is `ν_∞`, member `k` is `ν_k`.
pub fn make_example1_class(k_max: usize) -> Result<EnvironmentClass> {
    if k_max == 0 {
        return Err(Error::spec("example1 class needs K ≥ 1"));
    }
    let norm: f64 = (1..=k_max).map(|k| 0.5f64.powi(k as i32)).sum();
    let mut members: Vec<(EnvRef, f64)> = vec![(Arc::new(example1_nu_inf()), 0.5)];
    for k in 1..=k_max {
        members.push((
            Arc::new(example1_nu_k(k)?),
            0.5 * 0.5f64.powi(k as i32) / norm,
        ));
    }
    EnvironmentClass::finite(format!("example1{{K={k_max}}}"), members)
}

/// The countably infinite class `{ν_∞, ν_1, ν_2, ...}` with
/// `w(ν_∞) = 1/2`, `w(ν_k) = 2^{-(k+1)}`.
pub fn make_example1_countable_class() -> EnvironmentClass {
    let alphabet = example1_nu_inf().alphabet().clone();
    EnvironmentClass::countable(
        "example1{K=inf}",
        alphabet,
        Arc::new(|i| -> EnvRef {
            if i == 0 {
                Arc::new(example1_nu_inf())
            } else {
                Arc::new(example1_nu_k(i).expect("k ≥ 1"))
            }
        }),
        Arc::new(|i| 0.5f64.powi(i as i32 + 1)),
        Arc::new(|n| if n == 0 { 1.0 } else { 0.5f64.powi(n as i32) }),
    )
}

/// Two actions; `α` keeps paying 1, `β` falls into an absorbing state that
/// pays nothing.
pub fn make_trap_env() -> FiniteAutomaton {
    let spec = AutomatonSpec {
        name: "trap".into(),
        num_actions: 2,
        rewards: vec![Reward::ZERO, Reward::ONE],
        initial: "free".into(),
        states: vec![
            StateSpec {
                name: "free".into(),
                observation: 0,
                transitions: vec![
                    TransitionSpec {
                        action: Some(ALPHA.0),
                        next: "free".into(),
                        reward: Reward::ONE,
                        min_time: None,
                        max_time: None,
                    },
                    TransitionSpec {
                        action: Some(BETA.0),
                        next: "trapped".into(),
                        reward: Reward::ZERO,
                        min_time: None,
                        max_time: None,
                    },
                ],
            },
            StateSpec {
                name: "trapped".into(),
                observation: 0,
                transitions: vec![TransitionSpec {
                    action: None,
                    next: "trapped".into(),
                    reward: Reward::ZERO,
                    min_time: None,
                    max_time: None,
                }],
            },
        ],
    };
    FiniteAutomaton::new(spec).expect("valid automaton")
}

pub fn make_finite_automaton(spec: AutomatonSpec) -> Result<FiniteAutomaton> {
    FiniteAutomaton::new(spec)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5eed_u64, |h, &p| splitmix(h ^ splitmix(p)))
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// A pseudo-random distribution of length `n` determined by `key`. Entries
/// are zeroed with probability `sparsity`, but at least one stays positive.
fn hashed_distribution(key: &[u64], n: usize, sparsity: f64) -> Vec<f64> {
    let base = mix(key);
    let mut w: Vec<f64> = (0..n as u64)
        .map(|j| {
            let h = splitmix(base ^ splitmix(j + 1));
            if unit(h) < sparsity {
                0.0
            } else {
                -(1.0 - unit(splitmix(h))).ln() + 1e-3
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[(base % n as u64) as usize] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// A pseudo-random stochastic environment determined by a seed.
///
/// With `num_states = None` the percept distribution depends on the whole
/// history (through a rolling hash). With `Some(k)` the environment is a
/// random stochastic automaton on `k` hidden states.
#[derive(Clone, Debug)]
pub struct RandomEnv {
    alphabet: Alphabet,
    seed: u64,
    num_states: Option<u64>,
    sparsity: f64,
}

impl RandomEnv {
    pub fn new(seed: u64, alphabet: Alphabet, num_states: Option<u64>, sparsity: f64) -> Self {
        RandomEnv {
            alphabet,
            seed,
            num_states,
            sparsity,
        }
    }

    fn node(state: &EnvState) -> u64 {
        match state {
            EnvState::Node(s) => *s,
            other => panic!("random environment given foreign state {other:?}"),
        }
    }
}

impl Environment for RandomEnv {
    fn name(&self) -> String {
        format!("random{{seed={}}}", self.seed)
    }

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn initial_state(&self) -> EnvState {
        EnvState::Node(0)
    }

    fn predict(&self, state: &EnvState, _t: usize, action: Action) -> Vec<f64> {
        hashed_distribution(
            &[self.seed, Self::node(state), action.0 as u64],
            self.alphabet.num_percepts(),
            self.sparsity,
        )
    }

    fn advance(&self, state: &mut EnvState, _t: usize, action: Action, percept: Percept) {
        let e = self
            .alphabet
            .index_of(percept)
            .expect("percept in alphabet") as u64;
        let h = mix(&[self.seed, 0xadd, Self::node(state), action.0 as u64, e]);
        *state = EnvState::Node(match self.num_states {
            Some(k) => h % k,
            None => h,
        });
    }

    fn key_of(&self, state: &EnvState, _t: usize) -> Option<StateKey> {
        Some(StateKey(vec![Self::node(state)]))
    }
}

/// A pseudo-random history-dependent policy determined by a seed.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    seed: u64,
    num_actions: usize,
    deterministic: bool,
}

impl RandomPolicy {
    pub fn new(seed: u64, num_actions: usize, deterministic: bool) -> Self {
        RandomPolicy {
            seed,
            num_actions,
            deterministic,
        }
    }
}

impl Policy for RandomPolicy {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>> {
        let mut key = vec![self.seed];
        for s in history.steps() {
            key.push(s.action.0 as u64);
            key.push(u64::from(s.percept.observation));
            key.push(
                u64::from(s.percept.reward.numer()) << 32 | u64::from(s.percept.reward.denom()),
            );
        }
        let d = hashed_distribution(&key, self.num_actions, 0.0);
        if self.deterministic {
            let best = (mix(&key) % self.num_actions as u64) as usize;
            return Ok(one_hot(self.num_actions, best));
        }
        Ok(d)
    }
}

/// A finite class of `size` random environments with random positive prior.
pub fn make_random_class(
    seed: u64,
    size: usize,
    alphabet: &Alphabet,
    num_states: Option<u64>,
    sparsity: f64,
) -> Result<EnvironmentClass> {
    let raw: Vec<f64> = (0..size as u64)
        .map(|i| 0.1 + unit(mix(&[seed, 0x9a1, i])))
        .collect();
    let total: f64 = raw.iter().sum();
    let members = raw
        .iter()
        .enumerate()
        .map(|(i, w)| -> (EnvRef, f64) {
            let env = RandomEnv::new(
                mix(&[seed, i as u64]),
                alphabet.clone(),
                num_states,
                sparsity,
            );
            (Arc::new(env), w / total)
        })
        .collect();
    EnvironmentClass::finite(format!("random{{seed={seed},size={size}}}"), members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::{is_distribution, rollout, ConstantPolicy, FnPolicy};

    fn rewards(h: &History) -> Vec<Reward> {
        h.steps().iter().map(|s| s.percept.reward).collect()
    }

    fn play(env: &dyn Environment, actions: &[Action]) -> History {
        let mut h = History::new();
        let mut state = env.initial_state();
        for &a in actions {
            let t = h.time();
            let d = env.predict(&state, t, a);
            let e = env
                .alphabet()
                .percept(d.iter().position(|&p| p == 1.0).unwrap());
            env.advance(&mut state, t, a, e);
            h.push(a, e);
        }
        h
    }

    #[test]
    fn nu_inf_always_beta_pays_half() {
        let env = example1_nu_inf();
        let h = play(&env, &[BETA; 20]);
        assert!(rewards(&h).iter().all(|&r| r == Reward::HALF));
    }

    #[test]
    fn nu_k_unlocked_path_pays_one() {
        for k in 1..5 {
            let env = example1_nu_k(k).unwrap();
            // wait at s0 until t = k, then α forever
            let mut actions = vec![BETA; k - 1];
            actions.extend([ALPHA; 6]);
            let h = play(&env, &actions);
            let tail: Vec<Reward> = rewards(&h)[k - 1..].to_vec();
            assert_eq!(
                tail,
                vec![
                    Reward::ZERO,
                    Reward::ZERO,
                    Reward::ONE,
                    Reward::ONE,
                    Reward::ONE,
                    Reward::ONE
                ]
            );
        }
    }

    #[test]
    fn nu_k_matches_nu_inf_before_unlock() {
        let inf = example1_nu_inf();
        for k in 1..8 {
            let nk = example1_nu_k(k).unwrap();
            for seed in 0..50 {
                let policy = RandomPolicy::new(seed, 2, true);
                let h = rollout(&inf, &policy, k - 1, seed).unwrap();
                let a = play(
                    &inf,
                    &h.steps().iter().map(|s| s.action).collect::<Vec<_>>(),
                );
                let b = play(&nk, &h.steps().iter().map(|s| s.action).collect::<Vec<_>>());
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn trap_is_absorbing() {
        let env = make_trap_env();
        let h = play(&env, &[ALPHA, BETA, ALPHA, ALPHA, BETA, ALPHA]);
        assert_eq!(rewards(&h)[0], Reward::ONE);
        assert!(rewards(&h)[1..].iter().all(|&r| r == Reward::ZERO));
    }

    #[test]
    fn automaton_spec_round_trips() {
        let spec = example1_nu_k(3).unwrap().spec().clone();
        let text = spec.to_toml();
        let back = AutomatonSpec::from_toml(&text).unwrap();
        assert_eq!(spec, back);
        assert!(FiniteAutomaton::new(back).is_ok());
    }

    #[test]
    fn malformed_automata_are_rejected() {
        let mut spec = example1_nu_k(3).unwrap().spec().clone();
        spec.states[0].transitions.remove(1);
        assert!(FiniteAutomaton::new(spec).is_err());
        let mut spec = example1_nu_inf().spec().clone();
        spec.states[1].transitions[0].next = "nowhere".into();
        assert!(FiniteAutomaton::new(spec).is_err());
        let mut spec = example1_nu_inf().spec().clone();
        let dup = spec.states[1].transitions[0].clone();
        spec.states[1].transitions.push(dup);
        assert!(FiniteAutomaton::new(spec).is_err());
    }

    #[test]
    fn bernoulli_good_arm_always_pays() {
        let env = make_bernoulli_bandit(&[0.0, 1.0]).unwrap();
        for seed in 0..20 {
            let h = rollout(
                &env,
                &ConstantPolicy {
                    action: Action(1),
                    num_actions: 2,
                },
                10,
                seed,
            )
            .unwrap();
            assert_eq!(h.total_reward(), 10.0);
        }
        assert_eq!(env.optimal_reward_sum(7), Some(7.0));
        assert!(make_bernoulli_bandit(&[1.5]).is_err());
    }

    #[test]
    fn discussion_bandit_payoffs() {
        let eps: Reward = "1/20".parse().unwrap();
        let class = make_discussion_bandit_class(4, eps).unwrap();
        let b3 = class.member(2).unwrap();
        let s = b3.initial_state();
        let pay = |a: usize| {
            let d = b3.predict(&s, 1, Action(a));
            b3.alphabet()
                .percept(d.iter().position(|&p| p == 1.0).unwrap())
                .reward
        };
        assert_eq!(pay(0), eps.complement());
        assert_eq!(pay(3), Reward::ONE);
        for a in [1, 2, 4] {
            assert_eq!(pay(a), Reward::ZERO);
        }
        for i in 0..4 {
            let m = class.member(i).unwrap();
            assert_eq!(
                m.predict(&m.initial_state(), 1, Action(0)),
                b3.predict(&s, 1, Action(0))
            );
        }
    }

    #[test]
    fn random_envs_emit_distributions() {
        let alphabet = Alphabet::new(3, 1, vec![Reward::ZERO, Reward::HALF, Reward::ONE]).unwrap();
        for seed in 0..20 {
            let env = RandomEnv::new(seed, alphabet.clone(), Some(3), 0.3);
            let policy = FnPolicy::new(3, |h: &History| Action(h.len() % 3));
            let h = rollout(&env, &policy, 12, seed).unwrap();
            let mut state = env.initial_state();
            for (i, s) in h.steps().iter().enumerate() {
                assert!(is_distribution(
                    &env.predict(&state, i + 1, s.action),
                    1e-12
                ));
                env.advance(&mut state, i + 1, s.action, s.percept);
            }
        }
    }

    #[test]
    fn automaton_keys_saturate_after_last_guard() {
        let env = example1_nu_k(4).unwrap();
        let s = env.initial_state();
        assert_ne!(env.key_of(&s, 3), env.key_of(&s, 4));
        assert_eq!(env.key_of(&s, 4), env.key_of(&s, 400));
    }
}
