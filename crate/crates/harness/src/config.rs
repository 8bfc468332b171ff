//! Experiment configuration: a single TOML file naming the environment,
//! class, agent, discount, checkpoints and metrics.

use std::path::Path;
use std::sync::Arc;

use grl::agents::AgentSpec;
use grl::bayes::{EnvRef, EnvironmentClass};
use grl::discount::DiscountSpec;
use grl::envs::{self, AutomatonSpec};
use grl::interaction::{Alphabet, Reward};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::HarnessError;

/// Overrides `node_budget` in every config.
pub const NODE_BUDGET_VAR: &str = "GRL_NODE_BUDGET";

/// The true environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Example1NuInf,
    Example1NuK {
        k: usize,
    },
    Trap,
    BernoulliBandit {
        means: Vec<f64>,
    },
    DeterministicBandit {
        payoffs: Vec<Reward>,
        levels: Vec<Reward>,
    },
    Automaton {
        spec: AutomatonSpec,
    },
    /// Member `index` of the configured class.
    ClassMember {
        index: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedEnv {
    pub env: EnvSpec,
    pub weight: f64,
}

/// The agent's model class and prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSpec {
    /// `{ν_∞, ν_1..ν_K}`.
    Example1 {
        k_max: usize,
    },
    /// `{ν_∞, ν_1, ν_2, ...}`.
    Example1Countable,
    DiscussionBandits {
        n: usize,
        eps: Reward,
    },
    Random {
        seed: u64,
        size: usize,
        num_actions: usize,
        num_observations: usize,
        rewards: Vec<Reward>,
        #[serde(default)]
        num_states: Option<u64>,
        #[serde(default)]
        sparsity: f64,
    },
    Finite {
        members: Vec<WeightedEnv>,
    },
}

pub const ENV_KINDS: &[(&str, &str)] = &[
    (
        "example1_nu_inf",
        "β pays 1/2 forever, α detours pay nothing",
    ),
    (
        "example1_nu_k{k}",
        "like example1_nu_inf, but α α α from time k on pays 1 forever",
    ),
    (
        "trap",
        "α pays 1, β falls into an absorbing zero-reward state",
    ),
    (
        "bernoulli_bandit{means}",
        "stateless bandit with 0/1 rewards",
    ),
    (
        "deterministic_bandit{payoffs, levels}",
        "arm i always pays payoffs[i]",
    ),
    (
        "automaton{spec}",
        "finite automaton with time-guarded transitions",
    ),
    ("class_member{index}", "member of the configured class"),
];

pub const CLASS_KINDS: &[(&str, &str)] = &[
    (
        "example1{k_max}",
        "ν_∞ with prior 1/2 and ν_1..ν_K with prior ∝ 2^-k",
    ),
    (
        "example1_countable",
        "ν_∞ with prior 1/2 and ν_k with prior 2^-(k+1), k ≥ 1",
    ),
    (
        "discussion_bandits{n, eps}",
        "n deterministic (n+1)-armed bandits; arm 0 pays 1 - eps",
    ),
    (
        "random{seed, size, ...}",
        "random finite-state environments",
    ),
    (
        "finite{members}",
        "explicit list of environments with prior weights",
    ),
];

impl EnvSpec {
    pub fn build(&self, class: Option<&EnvironmentClass>) -> Result<EnvRef, HarnessError> {
        Ok(match self {
            EnvSpec::Example1NuInf => Arc::new(envs::example1_nu_inf()),
            EnvSpec::Example1NuK { k } => Arc::new(envs::example1_nu_k(*k)?),
            EnvSpec::Trap => Arc::new(envs::make_trap_env()),
            EnvSpec::BernoulliBandit { means } => Arc::new(envs::make_bernoulli_bandit(means)?),
            EnvSpec::DeterministicBandit { payoffs, levels } => Arc::new(
                envs::make_deterministic_bandit("deterministic", payoffs, levels)?,
            ),
            EnvSpec::Automaton { spec } => Arc::new(envs::make_finite_automaton(spec.clone())?),
            EnvSpec::ClassMember { index } => {
                let class = class.ok_or_else(|| {
                    HarnessError::invalid("environment `class_member` needs a class")
                })?;
                if class.len().is_some_and(|n| *index >= n) {
                    return Err(HarnessError::invalid(format!(
                        "class has no member {index}"
                    )));
                }
                class.member(*index).expect("index checked")
            }
        })
    }
}

impl ClassSpec {
    pub fn build(&self) -> Result<EnvironmentClass, HarnessError> {
        Ok(match self {
            ClassSpec::Example1 { k_max } => envs::make_example1_class(*k_max)?,
            ClassSpec::Example1Countable => envs::make_example1_countable_class(),
            ClassSpec::DiscussionBandits { n, eps } => {
                envs::make_discussion_bandit_class(*n, *eps)?
            }
            ClassSpec::Random {
                seed,
                size,
                num_actions,
                num_observations,
                rewards,
                num_states,
                sparsity,
            } => {
                let alphabet = Alphabet::new(*num_actions, *num_observations, rewards.clone())?;
                envs::make_random_class(*seed, *size, &alphabet, *num_states, *sparsity)?
            }
            ClassSpec::Finite { members } => {
                let built = members
                    .iter()
                    .map(|m| Ok((m.env.build(None)?, m.weight)))
                    .collect::<Result<Vec<_>, HarnessError>>()?;
                EnvironmentClass::finite("finite", built)?
            }
        })
    }
}

/// Quantities recorded at each checkpoint `t`. Evaluation windows end at
/// `m_t = t + H_t(eval_eps)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// `V*_μ(æ_{<t}) - V^π_μ(æ_{<t})`, the agent's value estimated by the
    /// return it collects over `[t, m_t]`.
    ValueGap,
    /// The same gap with the agent's current continuation evaluated exactly.
    ContinuationGap,
    /// `F^π_{m_t}(æ_{<t})` for the agent's continuation.
    BayesTv,
    /// Posterior weight of the true class member.
    PosteriorTruth,
    /// `R_t`: optimal expected reward sum minus the agent's reward sum.
    Regret,
    /// `R_t / t`.
    RegretRate,
    /// `R_t` of the agent's policy computed exactly from the empty history.
    ExactRegret,
    /// The recoverability gap of the true environment at `t`.
    Recoverability,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::ValueGap,
        MetricKind::ContinuationGap,
        MetricKind::BayesTv,
        MetricKind::PosteriorTruth,
        MetricKind::Regret,
        MetricKind::RegretRate,
        MetricKind::ExactRegret,
        MetricKind::Recoverability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::ValueGap => "value_gap",
            MetricKind::ContinuationGap => "continuation_gap",
            MetricKind::BayesTv => "bayes_tv",
            MetricKind::PosteriorTruth => "posterior_truth",
            MetricKind::Regret => "regret",
            MetricKind::RegretRate => "regret_rate",
            MetricKind::ExactRegret => "exact_regret",
            MetricKind::Recoverability => "recoverability",
        }
    }

    /// Computed once per checkpoint rather than per seed.
    pub fn is_exact(self) -> bool {
        matches!(self, MetricKind::ExactRegret | MetricKind::Recoverability)
    }

    fn needs_class(self) -> bool {
        matches!(self, MetricKind::BayesTv | MetricKind::PosteriorTruth)
    }
}

fn default_eval_eps() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub base_seed: u64,
    pub n_seeds: usize,
    pub checkpoints: Vec<usize>,
    pub metrics: Vec<MetricKind>,
    #[serde(default = "default_eval_eps")]
    pub eval_eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_budget: Option<usize>,
    pub discount: DiscountSpec,
    pub environment: EnvSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassSpec>,
    pub agent: AgentSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::invalid(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Applies the node-budget environment override, if set.
    pub fn resolve(mut self) -> Result<Self, HarnessError> {
        if let Ok(raw) = std::env::var(NODE_BUDGET_VAR) {
            let budget = raw.trim().parse().map_err(|_| {
                HarnessError::invalid(format!("{NODE_BUDGET_VAR}={raw:?} is not a node count"))
            })?;
            self.node_budget = Some(budget);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| {
            Err(HarnessError::invalid(format!(
                "config `{}`: {msg}",
                self.name
            )))
        };
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return fail("name must be a nonempty file stem".into());
        }
        if self.n_seeds == 0 {
            return fail("n_seeds must be at least 1".into());
        }
        if self.checkpoints.is_empty() || self.checkpoints[0] == 0 {
            return fail("checkpoints must be nonempty and start at t ≥ 1".into());
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return fail("checkpoints must be strictly increasing".into());
        }
        if self.metrics.is_empty() {
            return fail("no metrics requested".into());
        }
        if let Some(dup) = self
            .metrics
            .iter()
            .enumerate()
            .find(|(i, m)| self.metrics[..*i].contains(m))
        {
            return fail(format!("metric `{}` listed twice", dup.1.name()));
        }
        if !(self.eval_eps > 0.0 && self.eval_eps < 1.0) {
            return fail(format!(
                "eval_eps must lie in (0, 1), got {}",
                self.eval_eps
            ));
        }
        if self.node_budget == Some(0) {
            return fail("node_budget must be positive".into());
        }
        let has_class = self.class.is_some();
        if self.agent.needs_class() && !has_class {
            return fail(format!("agent `{}` needs a class", self.agent.name()));
        }
        if let Some(m) = self.metrics.iter().find(|m| m.needs_class() && !has_class) {
            return fail(format!("metric `{}` needs a class", m.name()));
        }
        if self.metrics.contains(&MetricKind::BayesTv) && !self.agent.needs_class() {
            return fail("bayes_tv needs an agent with a posterior".into());
        }
        if self.metrics.contains(&MetricKind::PosteriorTruth)
            && !matches!(self.environment, EnvSpec::ClassMember { .. })
        {
            return fail("posterior_truth needs environment `class_member`".into());
        }
        if self.metrics.contains(&MetricKind::ExactRegret)
            && matches!(self.agent, AgentSpec::Thompson { .. })
        {
            return fail("exact_regret needs an agent whose policy is fixed from the start".into());
        }
        Ok(())
    }
}
