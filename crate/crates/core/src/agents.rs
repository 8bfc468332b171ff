//! Agents: Thompson sampling, the Bayes-optimal agent, the informed agent
//! that knows the true environment, and two baselines.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::bayes::{BeliefState, EnvRef, EnvironmentClass};
use crate::discount::{effective_horizon, Discount, EpsilonSchedule};
use crate::error::{Error, Result};
use crate::interaction::{
    one_hot, Action, EnvState, Environment, History, Percept, Policy, StateKey, UniformPolicy,
};
use crate::planner::{HistoryPolicy, OptimalPolicy, Planner, PolicyModel};
use crate::rng::{self, Role, SimRng};

/// A policy usable both for sampling and for exact evaluation.
pub trait ContinuationPolicy: Policy + PolicyModel {}

impl<T: Policy + PolicyModel> ContinuationPolicy for T {}

impl<P: Policy> Policy for HistoryPolicy<P> {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>> {
        self.0.action_distribution(history)
    }
}

/// How far ahead a planning agent looks at time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HorizonRule {
    /// Consecutive blocks `[s, s + H_s(ε_s))` from `start`; every step of a
    /// block plans to the block's end.
    Blocks { start: usize, eps: EpsilonSchedule },
    /// Plans to `t + H_t(ε_t)` at every step.
    Receding { eps: EpsilonSchedule },
}

/// `t + max(H_t(ε_t), 1)`.
pub fn block_end(d: &dyn Discount, eps: &EpsilonSchedule, t: usize) -> Result<usize> {
    Ok(t + effective_horizon(d, t, eps.eps(t))?.max(1))
}

/// `π*_ρ` under a [`HorizonRule`]: the action at `h` is optimal in `ρ` for
/// the window `[t, end(t)]`.
pub struct PlanningPolicy {
    env: EnvRef,
    discount: Arc<dyn Discount>,
    rule: HorizonRule,
    planner: Planner,
    // block boundaries found so far, starting with `start`
    boundaries: Mutex<Vec<usize>>,
    by_end: Mutex<BTreeMap<usize, Arc<OptimalPolicy>>>,
}

impl PlanningPolicy {
    pub fn new(
        env: EnvRef,
        discount: Arc<dyn Discount>,
        rule: HorizonRule,
        planner: Planner,
    ) -> Result<Self> {
        let start = match rule {
            HorizonRule::Blocks { start, eps } => {
                eps.validate()?;
                start
            }
            HorizonRule::Receding { eps } => {
                eps.validate()?;
                1
            }
        };
        Ok(PlanningPolicy {
            env,
            discount,
            rule,
            planner,
            boundaries: Mutex::new(vec![start]),
            by_end: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn env(&self) -> &EnvRef {
        &self.env
    }

    /// The planning horizon in force at time `t`.
    pub fn end(&self, t: usize) -> Result<usize> {
        match self.rule {
            HorizonRule::Receding { eps } => block_end(self.discount.as_ref(), &eps, t),
            HorizonRule::Blocks { start, eps } => {
                if t < start {
                    return Err(Error::precondition(format!(
                        "time {t} precedes the first block at {start}"
                    )));
                }
                let mut b = self.boundaries.lock().expect("lock poisoned");
                while *b.last().expect("nonempty") <= t {
                    let s = *b.last().expect("nonempty");
                    b.push(block_end(self.discount.as_ref(), &eps, s)?);
                }
                Ok(*b.iter().find(|&&e| e > t).expect("boundary past t"))
            }
        }
    }

    /// The action after `history`, where `state` is `ρ`'s state.
    pub fn action(&self, state: &EnvState, history: &History) -> Result<Action> {
        let end = self.end(history.time())?;
        let policy = self
            .by_end
            .lock()
            .expect("lock poisoned")
            .entry(end)
            .or_insert_with(|| {
                Arc::new(OptimalPolicy::new(
                    self.env.clone(),
                    self.discount.clone(),
                    end,
                    self.planner,
                ))
            })
            .clone();
        policy.action(state, history)
    }
}

impl Policy for PlanningPolicy {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>> {
        let a = self.action(&self.env.state_at(history), history)?;
        Ok(one_hot(self.env.alphabet().num_actions(), a.0))
    }
}

impl PolicyModel for PlanningPolicy {
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

pub trait Agent: Send {
    fn name(&self) -> String;

    /// The action at time `history.time()`.
    fn act(&mut self, history: &History) -> Result<Action>;

    /// Conditions the agent on the cycle it just completed.
    fn observe(&mut self, action: Action, percept: Percept) -> Result<()>;

    /// A policy that agrees with the agent from `history` on, as far as the
    /// agent is committed. For Thompson sampling this is the current
    /// sample's block policy, continued as if every later draw returned the
    /// same sample; future resampling is not modelled.
    fn continuation(&mut self, history: &History) -> Result<Arc<dyn ContinuationPolicy>>;

    fn belief(&self) -> Option<&BeliefState> {
        None
    }

    fn blocks(&self) -> &[BlockRecord] {
        &[]
    }
}

/// One Thompson-sampling block.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockRecord {
    pub start: usize,
    /// Next resampling time.
    pub end: usize,
    pub sampled_index: usize,
    pub eps: f64,
    /// `Γ_end / Γ_start`, the normalized weight beyond the block's window.
    pub truncation_bound: f64,
}

struct Block {
    end: usize,
    state: EnvState,
    policy: Arc<PlanningPolicy>,
}

/// Thompson sampling: sample `ρ` from the posterior, follow `π*_ρ` for
/// `H_t(ε_t)` steps, repeat.
pub struct ThompsonAgent {
    belief: BeliefState,
    discount: Arc<dyn Discount>,
    eps: EpsilonSchedule,
    planner: Planner,
    rng: SimRng,
    block: Option<Block>,
    records: Vec<BlockRecord>,
}

impl ThompsonAgent {
    pub fn new(
        belief: BeliefState,
        discount: Arc<dyn Discount>,
        eps: EpsilonSchedule,
        planner: Planner,
        rng: SimRng,
    ) -> Result<Self> {
        eps.validate()?;
        Ok(ThompsonAgent {
            belief,
            discount,
            eps,
            planner,
            rng,
            block: None,
            records: Vec::new(),
        })
    }

    /// Starts a new block if `t` is a resampling time. Idempotent within a
    /// block, so querying the agent never moves its random stream.
    fn ensure_block(&mut self, history: &History) -> Result<&Block> {
        let t = history.time();
        if !self.block.as_ref().is_some_and(|b| t < b.end) {
            let sample = self.belief.sample_posterior(&mut self.rng)?;
            let rule = HorizonRule::Blocks {
                start: t,
                eps: self.eps,
            };
            let policy =
                PlanningPolicy::new(sample.env, self.discount.clone(), rule, self.planner)?;
            let end = policy.end(t)?;
            self.records.push(BlockRecord {
                start: t,
                end,
                sampled_index: sample.index,
                eps: self.eps.eps(t),
                truncation_bound: self.discount.ln_tail_ratio(t, end - t).exp(),
            });
            self.block = Some(Block {
                end,
                state: sample.state,
                policy: Arc::new(policy),
            });
        }
        Ok(self.block.as_ref().expect("block just ensured"))
    }
}

impl Agent for ThompsonAgent {
    fn name(&self) -> String {
        "thompson".into()
    }

    fn act(&mut self, history: &History) -> Result<Action> {
        let block = self.ensure_block(history)?;
        block.policy.action(&block.state, history)
    }

    fn observe(&mut self, action: Action, percept: Percept) -> Result<()> {
        let t = self.belief.history().time();
        self.belief.update_in_place(action, percept)?;
        if let Some(b) = self.block.as_mut() {
            b.policy.env().advance(&mut b.state, t, action, percept);
        }
        Ok(())
    }

    fn continuation(&mut self, history: &History) -> Result<Arc<dyn ContinuationPolicy>> {
        Ok(self.ensure_block(history)?.policy.clone())
    }

    fn belief(&self) -> Option<&BeliefState> {
        Some(&self.belief)
    }

    fn blocks(&self) -> &[BlockRecord] {
        &self.records
    }
}

/// Acts optimally in the posterior mixture `ξ`, replanning every step to
/// `t + H_t(ε_t)`.
pub struct BayesAgent {
    belief: BeliefState,
    discount: Arc<dyn Discount>,
    eps: EpsilonSchedule,
    planner: Planner,
}

impl BayesAgent {
    pub fn new(
        belief: BeliefState,
        discount: Arc<dyn Discount>,
        eps: EpsilonSchedule,
        planner: Planner,
    ) -> Result<Self> {
        eps.validate()?;
        Ok(BayesAgent {
            belief,
            discount,
            eps,
            planner,
        })
    }

    // The front mixture replays the Bayes update from the prior, so its
    // state after any history is the posterior after that history.
    fn policy(&self) -> Result<(PlanningPolicy, EnvState)> {
        let (xi, state) = self.belief.mixture()?;
        let rule = HorizonRule::Receding { eps: self.eps };
        Ok((
            PlanningPolicy::new(Arc::new(xi), self.discount.clone(), rule, self.planner)?,
            state,
        ))
    }
}

impl Agent for BayesAgent {
    fn name(&self) -> String {
        "bayes".into()
    }

    fn act(&mut self, history: &History) -> Result<Action> {
        let (policy, state) = self.policy()?;
        policy.action(&state, history)
    }

    fn observe(&mut self, action: Action, percept: Percept) -> Result<()> {
        self.belief.update_in_place(action, percept)
    }

    fn continuation(&mut self, _history: &History) -> Result<Arc<dyn ContinuationPolicy>> {
        Ok(Arc::new(self.policy()?.0))
    }

    fn belief(&self) -> Option<&BeliefState> {
        Some(&self.belief)
    }
}

/// Knows the true environment and plays its optimal policy with receding
/// horizon `t + H_t(ε_t)`.
pub struct InformedAgent {
    policy: Arc<PlanningPolicy>,
    state: EnvState,
    t: usize,
}

impl InformedAgent {
    pub fn new(
        env: EnvRef,
        discount: Arc<dyn Discount>,
        eps: EpsilonSchedule,
        planner: Planner,
    ) -> Result<Self> {
        let state = env.initial_state();
        let policy = PlanningPolicy::new(env, discount, HorizonRule::Receding { eps }, planner)?;
        Ok(InformedAgent {
            policy: Arc::new(policy),
            state,
            t: 1,
        })
    }
}

impl Agent for InformedAgent {
    fn name(&self) -> String {
        "informed".into()
    }

    fn act(&mut self, history: &History) -> Result<Action> {
        self.policy.action(&self.state, history)
    }

    fn observe(&mut self, action: Action, percept: Percept) -> Result<()> {
        self.policy
            .env()
            .advance(&mut self.state, self.t, action, percept);
        self.t += 1;
        Ok(())
    }

    fn continuation(&mut self, _history: &History) -> Result<Arc<dyn ContinuationPolicy>> {
        Ok(self.policy.clone())
    }
}

impl PolicyModel for UniformPolicy {
    fn initial_state(&self, _history: &History) -> Result<EnvState> {
        Ok(EnvState::Node(0))
    }

    fn distribution(&self, _state: &EnvState, history: &History) -> Result<Vec<f64>> {
        self.action_distribution(history)
    }

    fn key_of(&self, _state: &EnvState, _t: usize) -> Option<StateKey> {
        Some(StateKey(Vec::new()))
    }
}

/// Uniformly random actions from the agent's private stream.
pub struct RandomAgent {
    num_actions: usize,
    rng: SimRng,
}

impl RandomAgent {
    pub fn new(num_actions: usize, rng: SimRng) -> Self {
        RandomAgent { num_actions, rng }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> String {
        "random".into()
    }

    fn act(&mut self, _history: &History) -> Result<Action> {
        let uniform = vec![1.0 / self.num_actions as f64; self.num_actions];
        Ok(Action(rng::sample_index(&uniform, &mut self.rng)))
    }

    fn observe(&mut self, _action: Action, _percept: Percept) -> Result<()> {
        Ok(())
    }

    fn continuation(&mut self, _history: &History) -> Result<Arc<dyn ContinuationPolicy>> {
        Ok(Arc::new(UniformPolicy {
            num_actions: self.num_actions,
        }))
    }
}

/// A fixed time-indexed action schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `on` at `t ∈ {1, 2, 4, 8, ...}`, `off` otherwise.
    PowersOfTwo {
        on: usize,
        off: usize,
    },
    Constant {
        action: usize,
    },
    /// `actions[t-1]` while it lasts, `then` afterwards.
    Table {
        actions: Vec<usize>,
        then: usize,
    },
}

impl Schedule {
    pub fn action_at(&self, t: usize) -> Action {
        Action(match self {
            Schedule::PowersOfTwo { on, off } => {
                if t.is_power_of_two() {
                    *on
                } else {
                    *off
                }
            }
            Schedule::Constant { action } => *action,
            Schedule::Table { actions, then } => actions.get(t - 1).copied().unwrap_or(*then),
        })
    }

    fn max_action(&self) -> usize {
        match self {
            Schedule::PowersOfTwo { on, off } => *on.max(off),
            Schedule::Constant { action } => *action,
            Schedule::Table { actions, then } => actions.iter().copied().fold(*then, usize::max),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScheduledPolicy {
    pub schedule: Schedule,
    pub num_actions: usize,
}

impl Policy for ScheduledPolicy {
    fn action_distribution(&self, history: &History) -> Result<Vec<f64>> {
        Ok(one_hot(
            self.num_actions,
            self.schedule.action_at(history.time()).0,
        ))
    }
}

impl PolicyModel for ScheduledPolicy {
    fn initial_state(&self, _history: &History) -> Result<EnvState> {
        Ok(EnvState::Node(0))
    }

    fn distribution(&self, _state: &EnvState, history: &History) -> Result<Vec<f64>> {
        self.action_distribution(history)
    }

    fn key_of(&self, _state: &EnvState, _t: usize) -> Option<StateKey> {
        Some(StateKey(Vec::new()))
    }
}

pub struct ScheduledAgent {
    policy: Arc<ScheduledPolicy>,
}

impl ScheduledAgent {
    pub fn new(schedule: Schedule, num_actions: usize) -> Result<Self> {
        if schedule.max_action() >= num_actions {
            return Err(Error::spec(format!(
                "schedule uses an action outside 0..{num_actions}"
            )));
        }
        Ok(ScheduledAgent {
            policy: Arc::new(ScheduledPolicy {
                schedule,
                num_actions,
            }),
        })
    }
}

impl Agent for ScheduledAgent {
    fn name(&self) -> String {
        "scheduled".into()
    }

    fn act(&mut self, history: &History) -> Result<Action> {
        Ok(self.policy.schedule.action_at(history.time()))
    }

    fn observe(&mut self, _action: Action, _percept: Percept) -> Result<()> {
        Ok(())
    }

    fn continuation(&mut self, _history: &History) -> Result<Arc<dyn ContinuationPolicy>> {
        Ok(self.policy.clone())
    }
}

/// Agent constructors as named in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    Thompson {
        #[serde(default)]
        eps_schedule: EpsilonSchedule,
    },
    Bayes {
        #[serde(default)]
        eps_plan: EpsilonSchedule,
    },
    Informed {
        #[serde(default)]
        eps_plan: EpsilonSchedule,
    },
    Random,
    Scheduled {
        schedule: Schedule,
    },
}

/// Everything an agent may be built from.
#[derive(Clone)]
pub struct AgentContext {
    pub class: Option<Arc<EnvironmentClass>>,
    pub truth: EnvRef,
    pub discount: Arc<dyn Discount>,
    pub planner: Planner,
    pub base_seed: u64,
    pub seed: u64,
}

impl AgentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AgentSpec::Thompson { .. } => "thompson",
            AgentSpec::Bayes { .. } => "bayes",
            AgentSpec::Informed { .. } => "informed",
            AgentSpec::Random => "random",
            AgentSpec::Scheduled { .. } => "scheduled",
        }
    }

    pub fn needs_class(&self) -> bool {
        matches!(self, AgentSpec::Thompson { .. } | AgentSpec::Bayes { .. })
    }

    pub fn build(&self, ctx: &AgentContext) -> Result<Box<dyn Agent>> {
        let class = || {
            ctx.class.clone().ok_or_else(|| {
                Error::spec(format!(
                    "agent `{}` needs an environment class",
                    self.name()
                ))
            })
        };
        let num_actions = ctx.truth.alphabet().num_actions();
        Ok(match self {
            AgentSpec::Thompson { eps_schedule } => Box::new(ThompsonAgent::new(
                BeliefState::new(class()?)?,
                ctx.discount.clone(),
                *eps_schedule,
                ctx.planner,
                rng::stream(ctx.base_seed, ctx.seed, Role::Agent),
            )?),
            AgentSpec::Bayes { eps_plan } => Box::new(BayesAgent::new(
                BeliefState::new(class()?)?,
                ctx.discount.clone(),
                *eps_plan,
                ctx.planner,
            )?),
            AgentSpec::Informed { eps_plan } => Box::new(InformedAgent::new(
                ctx.truth.clone(),
                ctx.discount.clone(),
                *eps_plan,
                ctx.planner,
            )?),
            AgentSpec::Random => Box::new(RandomAgent::new(
                num_actions,
                rng::stream(ctx.base_seed, ctx.seed, Role::Agent),
            )),
            AgentSpec::Scheduled { schedule } => {
                Box::new(ScheduledAgent::new(schedule.clone(), num_actions)?)
            }
        })
    }
}

/// One agent/environment trajectory, advanced a cycle at a time.
pub struct Episode<'a> {
    env: &'a dyn Environment,
    state: EnvState,
    history: History,
    rng: SimRng,
}

impl<'a> Episode<'a> {
    /// Percepts are drawn from the environment stream of `(base_seed, seed)`.
    pub fn new(env: &'a dyn Environment, base_seed: u64, seed: u64) -> Self {
        Episode {
            env,
            state: env.initial_state(),
            history: History::new(),
            rng: rng::stream(base_seed, seed, Role::Environment),
        }
    }

    pub fn time(&self) -> usize {
        self.history.time()
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn env_state(&self) -> &EnvState {
        &self.state
    }

    pub fn step(&mut self, agent: &mut dyn Agent) -> Result<(Action, Percept)> {
        let t = self.time();
        let action = agent.act(&self.history)?;
        if action.0 >= self.env.alphabet().num_actions() {
            return Err(Error::precondition(format!(
                "agent chose invalid action {action}"
            )));
        }
        let dist = self.env.predict(&self.state, t, action);
        let percept = self
            .env
            .alphabet()
            .percept(rng::sample_index(&dist, &mut self.rng));
        self.env.advance(&mut self.state, t, action, percept);
        self.history.push(action, percept);
        agent.observe(action, percept)?;
        Ok((action, percept))
    }
}
