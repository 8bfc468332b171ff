//! Exact finite-horizon expectimax.
//!
//! Values are accumulated relative to `Γ_{t0}` at the root and normalized per
//! node, so a node at time `t` reports `(1/Γ_t) Σ_{k=t}^{m} γ_k E[r_k]` plus
//! an optional terminal value weighted by `Γ_{m+1}/Γ_t`. Nodes are memoized
//! on `(t, state key)` whenever the environment (and, when evaluating a
//! policy, the policy) exposes a key.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::bayes::{BeliefState, EnvRef};
use crate::discount::{Discount, Window};
use crate::error::{Error, Result};
use crate::interaction::{
    one_hot, Action, EnvState, Environment, History, Percept, Policy, StateKey, Step,
};

pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;

/// Terminal payoff at the leaves (time `m + 1`), as a normalized value.
pub type TerminalFn<'a> = dyn Fn(&History, &EnvState) -> Result<f64> + 'a;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Max,
    Min,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum NodeKey {
    State {
        t: usize,
        key: StateKey,
    },
    /// Full history, for nodes without a state key.
    Path(Vec<Step>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeEntry {
    pub value: f64,
    pub action_values: Vec<f64>,
    pub action: Action,
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub t0: usize,
    pub m: usize,
    pub root_value: f64,
    pub root_action_values: Vec<f64>,
    pub root_action: Action,
    pub nodes: HashMap<NodeKey, NodeEntry>,
    pub node_count: usize,
    keyed: bool,
}

impl PlanResult {
    /// The entry for the node reached by `history`, whose environment state
    /// is `state`.
    pub fn node(
        &self,
        env: &dyn Environment,
        state: &EnvState,
        history: &History,
    ) -> Option<&NodeEntry> {
        let t = history.time();
        if t < self.t0 || t > self.m {
            return None;
        }
        let key = match self.keyed.then(|| env.key_of(state, t)).flatten() {
            Some(key) => NodeKey::State { t, key },
            None => NodeKey::Path(history.steps().to_vec()),
        };
        self.nodes.get(&key)
    }
}

/// A policy whose choices depend on the history only through a state it
/// maintains, so that policy evaluation can memoize.
pub trait PolicyModel: Send + Sync {
    fn initial_state(&self, history: &History) -> Result<EnvState>;

    fn distribution(&self, state: &EnvState, history: &History) -> Result<Vec<f64>>;

    fn advance(&self, _state: &mut EnvState, _t: usize, _action: Action, _percept: Percept) {}

    fn key_of(&self, _state: &EnvState, _t: usize) -> Option<StateKey> {
        None
    }
}

/// Adapts a plain history-indexed [`Policy`]; evaluation cannot memoize.
pub struct HistoryPolicy<P>(pub P);

impl<P: Policy> PolicyModel for HistoryPolicy<P> {
    fn initial_state(&self, _history: &History) -> Result<EnvState> {
        Ok(EnvState::Node(0))
    }

    fn distribution(&self, _state: &EnvState, history: &History) -> Result<Vec<f64>> {
        self.0.action_distribution(history)
    }
}

enum Choice<'a> {
    Optimize(Objective),
    Follow(&'a dyn PolicyModel),
}

struct Search<'a> {
    env: &'a dyn Environment,
    window: &'a Window,
    rewards: Vec<f64>,
    choice: Choice<'a>,
    terminal: Option<&'a TerminalFn<'a>>,
    memoize: bool,
    budget: usize,
    count: usize,
    memo: HashMap<NodeKey, f64>,
    nodes: HashMap<NodeKey, NodeEntry>,
}

impl Search<'_> {
    fn key(&self, h: &History, s: &EnvState, ps: &EnvState, t: usize) -> NodeKey {
        let keyed = self.memoize.then(|| self.env.key_of(s, t)).flatten();
        let key = match (&self.choice, keyed) {
            (Choice::Optimize(_), Some(k)) => Some(k),
            (Choice::Follow(p), Some(mut k)) => p.key_of(ps, t).map(|pk| {
                k.0.push(u64::MAX);
                k.0.extend(pk.0);
                k
            }),
            (_, None) => None,
        };
        match key {
            Some(key) => NodeKey::State { t, key },
            None => NodeKey::Path(h.steps().to_vec()),
        }
    }

    fn node(&mut self, h: &mut History, s: &EnvState, ps: &EnvState, t: usize) -> Result<f64> {
        let norm = self.window.normalizer(t);
        if t > self.window.m {
            return match self.terminal {
                Some(f) if norm > 0.0 => Ok(f(h, s)? * norm),
                _ => Ok(0.0),
            };
        }
        let key = self.key(h, s, ps, t);
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        self.count += 1;
        if self.count > self.budget {
            return Err(Error::BudgetExceeded {
                budget: self.budget,
            });
        }
        let w = self.window.reward_weight(t);
        let alphabet = self.env.alphabet();
        let policy = match self.choice {
            Choice::Follow(p) => Some(p.distribution(ps, h)?),
            Choice::Optimize(_) => None,
        };
        let mut q = vec![0.0; alphabet.num_actions()];
        for a in alphabet.actions() {
            if policy.as_ref().is_some_and(|pi| pi[a.0] == 0.0) {
                continue;
            }
            let nu = self.env.predict(s, t, a);
            let mut qa = 0.0;
            for (ei, &p) in nu.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let e = alphabet.percept(ei);
                let mut child = s.clone();
                self.env.advance(&mut child, t, a, e);
                let mut child_ps = ps.clone();
                if let Choice::Follow(model) = self.choice {
                    model.advance(&mut child_ps, t, a, e);
                }
                h.push(a, e);
                let v = self.node(h, &child, &child_ps, t + 1);
                h.pop();
                qa += p * (w * self.rewards[ei] + v?);
            }
            q[a.0] = qa;
        }
        let (value, action) = match (&self.choice, policy) {
            (Choice::Follow(_), Some(pi)) => (pi.iter().zip(&q).map(|(p, v)| p * v).sum(), None),
            (Choice::Optimize(obj), _) => {
                let best = match obj {
                    Objective::Max => q.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Objective::Min => q.iter().copied().fold(f64::INFINITY, f64::min),
                };
                let tol = 1e-12 * best.abs().max(norm);
                let a = q
                    .iter()
                    .position(|&v| (v - best).abs() <= tol)
                    .expect("some action attains the optimum");
                (best, Some(Action(a)))
            }
            _ => unreachable!("follow mode always has a policy"),
        };
        if let Some(action) = action {
            let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            self.nodes.insert(
                key.clone(),
                NodeEntry {
                    value: value * scale,
                    action_values: q.iter().map(|v| v * scale).collect(),
                    action,
                },
            );
        }
        if matches!(key, NodeKey::State { .. }) {
            self.memo.insert(key, value);
        }
        Ok(value)
    }
}

/// Planner configuration: node budget and whether to memoize on state keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Planner {
    pub budget: usize,
    pub memoize: bool,
}

impl Default for Planner {
    fn default() -> Self {
        Planner {
            budget: DEFAULT_NODE_BUDGET,
            memoize: true,
        }
    }
}

impl Planner {
    pub fn with_budget(budget: usize) -> Self {
        Planner {
            budget,
            ..Planner::default()
        }
    }

    pub fn unmemoized(self) -> Self {
        Planner {
            memoize: false,
            ..self
        }
    }

    fn search<'a>(
        &self,
        env: &'a dyn Environment,
        window: &'a Window,
        choice: Choice<'a>,
        terminal: Option<&'a TerminalFn<'a>>,
    ) -> Search<'a> {
        Search {
            env,
            window,
            rewards: env.alphabet().reward_values(),
            choice,
            terminal,
            memoize: self.memoize,
            budget: self.budget,
            count: 0,
            memo: HashMap::new(),
            nodes: HashMap::new(),
        }
    }

    /// Expectimax (or expectimin) from `history`, where `state` is the
    /// environment's state after it.
    pub fn plan(
        &self,
        env: &dyn Environment,
        state: &EnvState,
        history: &History,
        window: &Window,
        objective: Objective,
        terminal: Option<&TerminalFn<'_>>,
    ) -> Result<PlanResult> {
        let t0 = history.time();
        check_window(window, t0)?;
        let mut search = self.search(env, window, Choice::Optimize(objective), terminal);
        let mut h = history.clone();
        let root = search.node(&mut h, state, &EnvState::Node(0), t0)?;
        let (root_action_values, root_action) = if t0 > window.m {
            (Vec::new(), Action(0))
        } else {
            let key = search.key(history, state, &EnvState::Node(0), t0);
            let entry = &search.nodes[&key];
            (entry.action_values.clone(), entry.action)
        };
        let norm = window.normalizer(t0);
        Ok(PlanResult {
            t0,
            m: window.m,
            root_value: if norm > 0.0 { root / norm } else { 0.0 },
            root_action_values,
            root_action,
            node_count: search.count,
            nodes: search.nodes,
            keyed: self.memoize,
        })
    }

    /// Value of `model` from `history`.
    pub fn evaluate(
        &self,
        env: &dyn Environment,
        state: &EnvState,
        model: &dyn PolicyModel,
        model_state: &EnvState,
        history: &History,
        window: &Window,
        terminal: Option<&TerminalFn<'_>>,
    ) -> Result<f64> {
        let t0 = history.time();
        check_window(window, t0)?;
        let mut search = self.search(env, window, Choice::Follow(model), terminal);
        let mut h = history.clone();
        let root = search.node(&mut h, state, model_state, t0)?;
        let norm = window.normalizer(t0);
        Ok(if norm > 0.0 { root / norm } else { 0.0 })
    }

    /// `D_m(P, Q | history)` for `P = ν_a^{π_a}`, `Q = ν_b^{π_b}`: half the
    /// L1 distance between the distributions over continuations up to `m`.
    #[allow(clippy::too_many_arguments)]
    pub fn tv_distance(
        &self,
        env_a: &dyn Environment,
        state_a: &EnvState,
        policy_a: &dyn Policy,
        env_b: &dyn Environment,
        state_b: &EnvState,
        policy_b: &dyn Policy,
        history: &History,
        m: usize,
    ) -> Result<f64> {
        if env_a.alphabet() != env_b.alphabet() {
            return Err(Error::precondition(
                "total variation needs a common alphabet",
            ));
        }
        let mut tv = Tv {
            a: (env_a, policy_a),
            b: (env_b, policy_b),
            m,
            budget: self.budget,
            count: 0,
        };
        let mut h = history.clone();
        let l1 = tv.node(&mut h, Some(state_a), Some(state_b), 1.0, 1.0)?;
        Ok((0.5 * l1).clamp(0.0, 1.0))
    }
}

fn check_window(window: &Window, t0: usize) -> Result<()> {
    if window.t0 != t0 || window.m + 1 < t0 {
        return Err(Error::precondition(format!(
            "window [{}, {}] does not start at t = {t0}",
            window.t0, window.m
        )));
    }
    Ok(())
}

struct Tv<'a> {
    a: (&'a dyn Environment, &'a dyn Policy),
    b: (&'a dyn Environment, &'a dyn Policy),
    m: usize,
    budget: usize,
    count: usize,
}

impl Tv<'_> {
    /// `Σ |P(x) - Q(x)|` over the continuations `x` below this node, where
    /// `pa`, `pb` are the probabilities of reaching it.
    fn node(
        &mut self,
        h: &mut History,
        sa: Option<&EnvState>,
        sb: Option<&EnvState>,
        pa: f64,
        pb: f64,
    ) -> Result<f64> {
        // once one side has no mass, the subtree contributes the other's
        match (sa, sb) {
            (None, None) => return Ok(0.0),
            (Some(_), None) => return Ok(pa),
            (None, Some(_)) => return Ok(pb),
            _ => {}
        }
        let t = h.time();
        if t > self.m {
            return Ok((pa - pb).abs());
        }
        self.count += 1;
        if self.count > self.budget {
            return Err(Error::BudgetExceeded {
                budget: self.budget,
            });
        }
        let (sa, sb) = (sa.expect("checked"), sb.expect("checked"));
        let alphabet = self.a.0.alphabet();
        let pi_a = self.a.1.action_distribution(h)?;
        let pi_b = self.b.1.action_distribution(h)?;
        let mut total = 0.0;
        for a in alphabet.actions() {
            if pi_a[a.0] == 0.0 && pi_b[a.0] == 0.0 {
                continue;
            }
            let nu_a = self.a.0.predict(sa, t, a);
            let nu_b = self.b.0.predict(sb, t, a);
            for ei in 0..alphabet.num_percepts() {
                let qa = pa * pi_a[a.0] * nu_a[ei];
                let qb = pb * pi_b[a.0] * nu_b[ei];
                if qa == 0.0 && qb == 0.0 {
                    continue;
                }
                let e = alphabet.percept(ei);
                let advance = |env: &dyn Environment, s: &EnvState, q: f64| {
                    (q > 0.0).then(|| {
                        let mut c = s.clone();
                        env.advance(&mut c, t, a, e);
                        c
                    })
                };
                let ca = advance(self.a.0, sa, qa);
                let cb = advance(self.b.0, sb, qb);
                h.push(a, e);
                let r = self.node(h, ca.as_ref(), cb.as_ref(), qa, qb);
                h.pop();
                total += r?;
            }
        }
        Ok(total)
    }
}

/// `V^{π,m}_ν(h)`.
pub fn value_of_policy(
    env: &dyn Environment,
    policy: &dyn Policy,
    d: &dyn Discount,
    h: &History,
    m: usize,
) -> Result<f64> {
    let window = Window::new(d, h.time(), m);
    Planner::default().evaluate(
        env,
        &env.state_at(h),
        &HistoryPolicy(policy),
        &EnvState::Node(0),
        h,
        &window,
        None,
    )
}

/// `V^{*,m}_ν(h)` together with the optimal action at every reachable node.
pub fn optimal_plan(
    env: &dyn Environment,
    d: &dyn Discount,
    h: &History,
    m: usize,
) -> Result<PlanResult> {
    let window = Window::new(d, h.time(), m);
    Planner::default().plan(env, &env.state_at(h), h, &window, Objective::Max, None)
}

/// Expectimax in the belief's mixture `ξ` from the belief's history.
pub fn optimal_plan_in_mixture(
    belief: &BeliefState,
    d: &dyn Discount,
    m: usize,
) -> Result<PlanResult> {
    let (xi, state) = belief.mixture()?;
    let h = belief.history();
    Planner::default().plan(
        &xi,
        &state,
        h,
        &Window::new(d, h.time(), m),
        Objective::Max,
        None,
    )
}

/// Expectimin with `terminal_value` at the leaves.
pub fn min_plan(
    env: &dyn Environment,
    d: &dyn Discount,
    h: &History,
    m: usize,
    terminal_value: &TerminalFn<'_>,
) -> Result<PlanResult> {
    let window = Window::new(d, h.time(), m);
    Planner::default().plan(
        env,
        &env.state_at(h),
        h,
        &window,
        Objective::Min,
        Some(terminal_value),
    )
}

/// `D_m(ν_a^{π_a}, ν_b^{π_b} | h)` by exact enumeration.
pub fn tv_distance(
    env_a: &dyn Environment,
    policy_a: &dyn Policy,
    env_b: &dyn Environment,
    policy_b: &dyn Policy,
    h: &History,
    m: usize,
) -> Result<f64> {
    Planner::default().tv_distance(
        env_a,
        &env_a.state_at(h),
        policy_a,
        env_b,
        &env_b.state_at(h),
        policy_b,
        h,
        m,
    )
}

/// `π*_ρ` truncated at a fixed horizon, computed lazily.
///
/// Actions are looked up in cached plans; a node the cached plans never
/// reached (for example after a percept `ρ` deems impossible) triggers a
/// fresh plan from that node.
pub struct OptimalPolicy {
    env: EnvRef,
    discount: Arc<dyn Discount>,
    horizon: usize,
    planner: Planner,
    plans: Mutex<Vec<Arc<PlanResult>>>,
}

impl std::fmt::Debug for OptimalPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OptimalPolicy")
            .field("env", &self.env.name())
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl OptimalPolicy {
    pub fn new(env: EnvRef, discount: Arc<dyn Discount>, horizon: usize, planner: Planner) -> Self {
        OptimalPolicy {
            env,
            discount,
            horizon,
            planner,
            plans: Mutex::new(Vec::new()),
        }
    }

    /// Seeds the cache with an existing plan of `env` to the same horizon.
    pub fn with_plan(mut self, plan: PlanResult) -> Self {
        self.plans
            .get_mut()
            .expect("lock poisoned")
            .push(Arc::new(plan));
        self
    }

    pub fn env(&self) -> &EnvRef {
        &self.env
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// The optimal action after `history`, where `state` is `ρ`'s state.
    pub fn action(&self, state: &EnvState, history: &History) -> Result<Action> {
        let mut plans = self.plans.lock().expect("lock poisoned");
        for plan in plans.iter().rev() {
            if let Some(entry) = plan.node(self.env.as_ref(), state, history) {
                return Ok(entry.action);
            }
        }
        let t = history.time();
        let window = Window::new(self.discount.as_ref(), t, self.horizon.max(t));
        let plan = self.planner.plan(
            self.env.as_ref(),
            state,
            history,
            &window,
            Objective::Max,
            None,
        )?;
        let action = plan.root_action;
        plans.push(Arc::new(plan));
        Ok(action)
    }
}

impl Policy for OptimalPolicy {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>> {
        let state = self.env.state_at(history);
        let a = self.action(&state, history)?;
        Ok(one_hot(self.env.alphabet().num_actions(), a.0))
    }
}

impl PolicyModel for OptimalPolicy {
    fn initial_state(&self, history: &History) -> Result<EnvState> {
        Ok(self.env.state_at(history))
    }

    fn distribution(&self, state: &EnvState, history: &History) -> Result<Vec<f64>> {
        let a = self.action(state, history)?;
        Ok(one_hot(self.env.alphabet().num_actions(), a.0))
    }

    fn advance(&self, state: &mut EnvState, t: usize, action: Action, percept: Percept) {
        self.env.advance(state, t, action, percept)
    }

    fn key_of(&self, state: &EnvState, t: usize) -> Option<StateKey> {
        self.env.key_of(state, t)
    }
}
