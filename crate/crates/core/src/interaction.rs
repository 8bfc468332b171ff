//! The agent/environment interaction formalism.
//!
//! An agent emits an [`Action`], the environment answers with a [`Percept`]
//! (an observation plus a reward in `[0, 1]`), and the resulting sequence of
//! cycles is a [`History`]. Time is 1-based: the first action is taken at
//! `t = 1`, so a history of length `t - 1` is "the history before time `t`".
//!
//! Environments and policies are conditional distributions over finite
//! alphabets. Environments additionally expose an explicit [`EnvState`] so
//! that long trajectories can be advanced incrementally instead of replaying
//! the whole history for each query.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action(pub usize);

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// An exact reward level in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reward(Ratio<u32>);

impl Reward {
    pub const ZERO: Reward = Reward(Ratio::new_raw(0, 1));
    pub const HALF: Reward = Reward(Ratio::new_raw(1, 2));
    pub const ONE: Reward = Reward(Ratio::new_raw(1, 1));

    pub fn new(numer: u32, denom: u32) -> Result<Self> {
        if denom == 0 {
            return Err(Error::spec("reward denominator is zero"));
        }
        if numer > denom {
            return Err(Error::spec(format!("reward {numer}/{denom} exceeds 1")));
        }
        Ok(Reward(Ratio::new(numer, denom)))
    }

    pub fn numer(self) -> u32 {
        *self.0.numer()
    }

    pub fn denom(self) -> u32 {
        *self.0.denom()
    }

    pub fn value(self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    /// `1 - self`, exactly.
    pub fn complement(self) -> Reward {
        Reward(Ratio::from_integer(1) - self.0)
    }
}

impl fmt::Display for Reward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

/// Accepts `"a/b"`, integers, and plain decimals such as `"0.95"`.
impl FromStr for Reward {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::spec(format!("malformed reward {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            let n: u32 = n.trim().parse().map_err(|_| bad())?;
            let d: u32 = d.trim().parse().map_err(|_| bad())?;
            return Reward::new(n, d);
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let int: u64 = if int.is_empty() {
                0
            } else {
                int.parse().map_err(|_| bad())?
            };
            let den = 10u64.pow(frac.len() as u32);
            let num = int * den + frac.parse::<u64>().map_err(|_| bad())?;
            let g = gcd(num, den);
            let (num, den) = (num / g, den / g);
            let num = u32::try_from(num).map_err(|_| bad())?;
            let den = u32::try_from(den).map_err(|_| bad())?;
            return Reward::new(num, den);
        }
        let n: u32 = s.parse().map_err(|_| bad())?;
        Reward::new(n, 1)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

impl Serialize for Reward {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Reward {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Percept {
    pub observation: u32,
    pub reward: Reward,
}

impl Percept {
    pub fn new(observation: u32, reward: Reward) -> Self {
        Percept {
            observation,
            reward,
        }
    }

    pub fn reward_only(reward: Reward) -> Self {
        Percept {
            observation: 0,
            reward,
        }
    }
}

impl fmt::Display for Percept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(o{},{})", self.observation, self.reward)
    }
}

/// The finite action set `A` and percept set `E = O x rewards`.
///
/// Percept indices are observation-major: index `o * |rewards| + r`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    num_actions: usize,
    num_observations: usize,
    rewards: Vec<Reward>,
}

impl Alphabet {
    pub fn new(
        num_actions: usize,
        num_observations: usize,
        mut rewards: Vec<Reward>,
    ) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::spec("alphabet needs at least one action"));
        }
        if num_observations == 0 {
            return Err(Error::spec("alphabet needs at least one observation"));
        }
        rewards.sort();
        rewards.dedup();
        if rewards.is_empty() {
            return Err(Error::spec("alphabet needs at least one reward level"));
        }
        Ok(Alphabet {
            num_actions,
            num_observations,
            rewards,
        })
    }

    /// Single-observation alphabet, i.e. percepts are rewards.
    pub fn rewards_only(num_actions: usize, rewards: Vec<Reward>) -> Result<Self> {
        Self::new(num_actions, 1, rewards)
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_observations(&self) -> usize {
        self.num_observations
    }

    pub fn rewards(&self) -> &[Reward] {
        &self.rewards
    }

    pub fn num_percepts(&self) -> usize {
        self.num_observations * self.rewards.len()
    }

    pub fn percept(&self, index: usize) -> Percept {
        let levels = self.rewards.len();
        Percept::new((index / levels) as u32, self.rewards[index % levels])
    }

    pub fn index_of(&self, percept: Percept) -> Option<usize> {
        if percept.observation as usize >= self.num_observations {
            return None;
        }
        let r = self.rewards.binary_search(&percept.reward).ok()?;
        Some(percept.observation as usize * self.rewards.len() + r)
    }

    pub fn actions(&self) -> impl Iterator<Item = Action> {
        (0..self.num_actions).map(Action)
    }

    pub fn percepts(&self) -> impl Iterator<Item = Percept> + '_ {
        (0..self.num_percepts()).map(|i| self.percept(i))
    }

    /// Reward values indexed like percepts.
    pub fn reward_values(&self) -> Vec<f64> {
        self.percepts().map(|p| p.reward.value()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Step {
    pub action: Action,
    pub percept: Percept,
}

/// A finite sequence of interaction cycles `a_1 e_1 ... a_{t-1} e_{t-1}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct History {
    steps: Vec<Step>,
}

impl History {
    pub fn new() -> Self {
        History::default()
    }

    pub fn from_steps(steps: Vec<Step>) -> Self {
        History { steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The time step of the next action.
    pub fn time(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn push(&mut self, action: Action, percept: Percept) {
        self.steps.push(Step { action, percept });
    }

    pub fn pop(&mut self) -> Option<Step> {
        self.steps.pop()
    }

    pub fn extended(&self, action: Action, percept: Percept) -> History {
        let mut h = self.clone();
        h.push(action, percept);
        h
    }

    pub fn prefix(&self, len: usize) -> History {
        History {
            steps: self.steps[..len.min(self.steps.len())].to_vec(),
        }
    }

    pub fn truncate(&mut self, len: usize) {
        self.steps.truncate(len);
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.percept.reward.value()).sum()
    }
}

impl fmt::Display for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return write!(f, "ε");
        }
        for s in &self.steps {
            write!(f, "{}{}", s.action, s.percept)?;
        }
        Ok(())
    }
}

/// Internal state of an environment after some history.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvState {
    /// A finite automaton node, or any other compact summary.
    Node(u64),
    /// The full history, for environments without a compact summary.
    Trace(History),
    /// Unnormalized log posterior weights and member states of a mixture.
    Mixture(MixtureState),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureState {
    pub log_weights: Vec<f64>,
    pub members: Vec<EnvState>,
}

impl EnvState {
    pub fn trace(&self) -> Option<&History> {
        match self {
            EnvState::Trace(h) => Some(h),
            _ => None,
        }
    }
}

/// Hashable summary of an environment state such that equal keys (at equal
/// times) imply identical conditional futures.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(pub Vec<u64>);

/// A conditional percept distribution `ν(e | æ_{<t} a_t)`.
///
/// Implementors provide the incremental interface (`initial_state`,
/// `predict`, `advance`); the history-indexed queries are derived from it.
pub trait Environment: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn alphabet(&self) -> &Alphabet;

    fn initial_state(&self) -> EnvState;

    /// Percept distribution (indexed by the alphabet) for `action` at time `t`.
    fn predict(&self, state: &EnvState, t: usize, action: Action) -> Vec<f64>;

    /// Advances `state` by the cycle taken at time `t`.
    fn advance(&self, state: &mut EnvState, t: usize, action: Action, percept: Percept);

    fn key_of(&self, _state: &EnvState, _t: usize) -> Option<StateKey> {
        None
    }

    /// Analytic `sup_π E[Σ_{t≤m} r_t]` when known.
    fn optimal_reward_sum(&self, _m: usize) -> Option<f64> {
        None
    }

    fn state_at(&self, history: &History) -> EnvState {
        let mut state = self.initial_state();
        for (i, s) in history.steps().iter().enumerate() {
            self.advance(&mut state, i + 1, s.action, s.percept);
        }
        state
    }

    fn percept_distribution(&self, history: &History, action: Action) -> Vec<f64> {
        self.predict(&self.state_at(history), history.time(), action)
    }

    fn state_key(&self, history: &History) -> Option<StateKey> {
        self.key_of(&self.state_at(history), history.time())
    }

    /// Probability of `percept` after `action` at `state`.
    fn percept_probability(
        &self,
        state: &EnvState,
        t: usize,
        action: Action,
        percept: Percept,
    ) -> f64 {
        match self.alphabet().index_of(percept) {
            Some(i) => self.predict(state, t, action)[i],
            None => 0.0,
        }
    }
}

impl<E: Environment + ?Sized> Environment for Arc<E> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn alphabet(&self) -> &Alphabet {
        (**self).alphabet()
    }
    fn initial_state(&self) -> EnvState {
        (**self).initial_state()
    }
    fn predict(&self, state: &EnvState, t: usize, action: Action) -> Vec<f64> {
        (**self).predict(state, t, action)
    }
    fn advance(&self, state: &mut EnvState, t: usize, action: Action, percept: Percept) {
        (**self).advance(state, t, action, percept)
    }
    fn key_of(&self, state: &EnvState, t: usize) -> Option<StateKey> {
        (**self).key_of(state, t)
    }
    fn optimal_reward_sum(&self, m: usize) -> Option<f64> {
        (**self).optimal_reward_sum(m)
    }
}

/// A conditional action distribution `π(a | æ_{<t})`.
pub trait Policy: Send + Sync {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>>;
}

impl<P: Policy + ?Sized> Policy for Arc<P> {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>> {
        (**self).action_distribution(history)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>> {
        (**self).action_distribution(history)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>> {
        (**self).action_distribution(history)
    }
}

#[derive(Clone, Debug)]
pub struct UniformPolicy {
    pub num_actions: usize,
}

impl Policy for UniformPolicy {
    fn action_distribution(&self, _history: &History) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.num_actions as f64; self.num_actions])
    }
}

/// Always plays one action.
#[derive(Clone, Debug)]
pub struct ConstantPolicy {
    pub action: Action,
    pub num_actions: usize,
}

impl Policy for ConstantPolicy {
    fn action_distribution(&self, _history: &History) -> Result<Vec<f64>> {
        Ok(one_hot(self.num_actions, self.action.0))
    }
}

/// Deterministic policy given by a function of the history.
pub struct FnPolicy<F> {
    num_actions: usize,
    choose: F,
}

impl<F> FnPolicy<F>
where
    F: Fn(&History) -> Action + Send + Sync,
{
    pub fn new(num_actions: usize, choose: F) -> Self {
        FnPolicy {
            num_actions,
            choose,
        }
    }
}

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&History) -> Action + Send + Sync,
{
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>> {
        Ok(one_hot(self.num_actions, (self.choose)(history).0))
    }
}

pub fn one_hot(len: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// `ν^π(æ_{<t}) = Π_k π(a_k | æ_{<k}) ν(e_k | æ_{<k} a_k)`.
pub fn joint_probability(
    env: &dyn Environment,
    policy: &dyn Policy,
    history: &History,
) -> Result<f64> {
    let mut p = 1.0;
    let mut state = env.initial_state();
    let mut prefix = History::new();
    for s in history.steps() {
        let t = prefix.time();
        let pa = policy.action_distribution(&prefix)?[s.action.0];
        p *= pa * env.percept_probability(&state, t, s.action, s.percept);
        if p == 0.0 {
            return Ok(0.0);
        }
        env.advance(&mut state, t, s.action, s.percept);
        prefix.push(s.action, s.percept);
    }
    Ok(p)
}

/// Samples a length-`horizon` history from `ν^π`.
///
/// The policy and the environment draw from separate streams derived from
/// `seed`.
pub fn rollout(
    env: &dyn Environment,
    policy: &dyn Policy,
    horizon: usize,
    seed: u64,
) -> Result<History> {
    let mut policy_rng = rng::stream(seed, 0, Role::Policy);
    let mut env_rng = rng::stream(seed, 0, Role::Environment);
    let alphabet = env.alphabet();
    let mut state = env.initial_state();
    let mut history = History::new();
    for _ in 0..horizon {
        let t = history.time();
        let action = Action(rng::sample_index(
            &policy.action_distribution(&history)?,
            &mut policy_rng,
        ));
        let percept = alphabet.percept(rng::sample_index(
            &env.predict(&state, t, action),
            &mut env_rng,
        ));
        env.advance(&mut state, t, action, percept);
        history.push(action, percept);
    }
    Ok(history)
}

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// All length-`depth` continuations of `from`, each with its conditional
/// probability `ν^π(· | from)`. Zero-probability continuations are included.
pub fn enumerate_histories(
    env: &dyn Environment,
    policy: &dyn Policy,
    from: &History,
    depth: usize,
    cap: usize,
) -> Result<Vec<(History, f64)>> {
    let alphabet = env.alphabet();
    let branching = (alphabet.num_actions() * alphabet.num_percepts()) as f64;
    if branching.powi(depth as i32) > cap as f64 {
        return Err(Error::BudgetExceeded { budget: cap });
    }
    let mut out = Vec::new();
    let mut current = from.clone();
    let state = env.state_at(from);
    enumerate_rec(env, policy, &mut current, &state, depth, 1.0, &mut out)?;
    Ok(out)
}

fn enumerate_rec(
    env: &dyn Environment,
    policy: &dyn Policy,
    current: &mut History,
    state: &EnvState,
    depth: usize,
    prob: f64,
    out: &mut Vec<(History, f64)>,
) -> Result<()> {
    if depth == 0 {
        out.push((current.clone(), prob));
        return Ok(());
    }
    let t = current.time();
    let pi = policy.action_distribution(current)?;
    for action in env.alphabet().actions() {
        let nu = env.predict(state, t, action);
        for (ei, &pe) in nu.iter().enumerate() {
            let percept = env.alphabet().percept(ei);
            let mut next = state.clone();
            env.advance(&mut next, t, action, percept);
            current.push(action, percept);
            enumerate_rec(
                env,
                policy,
                current,
                &next,
                depth - 1,
                prob * pi[action.0] * pe,
                out,
            )?;
            current.pop();
        }
    }
    Ok(())
}

/// Checks that a distribution is nonnegative and sums to one within `tol`.
pub fn is_distribution(p: &[f64], tol: f64) -> bool {
    p.iter().all(|&x| x >= 0.0 && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
}
