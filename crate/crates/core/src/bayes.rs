//! Environment classes, the Bayesian mixture `ξ`, and posterior beliefs.
//!
//! Countable classes are handled lazily: a [`BeliefState`] tracks an
//! enumerated front of members and certifies the posterior mass outside it
//! with the prior tail bound. Since likelihoods are at most 1, the posterior
//! of every unenumerated member is at most its prior divided by the front's
//! mixture mass.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::interaction::{
    Action, Alphabet, EnvState, Environment, History, MixtureState, Percept, StateKey,
};
use crate::rng::{self, SimRng};

pub type EnvRef = Arc<dyn Environment>;
pub type MemberFn = Arc<dyn Fn(usize) -> EnvRef + Send + Sync>;
pub type WeightFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// Default residual posterior mass allowed outside the enumerated front.
pub const DEFAULT_DELTA: f64 = 1e-9;

/// Largest front a countable class may be expanded to.
pub const MAX_FRONT: usize = 1 << 16;

#[derive(Clone)]
enum Members {
    Finite {
        envs: Vec<EnvRef>,
        priors: Vec<f64>,
        // suffix[n] = Σ_{i≥n} priors[i]
        suffix: Vec<f64>,
    },
    Countable {
        member: MemberFn,
        prior: WeightFn,
        tail: WeightFn,
    },
}

/// A countable set of environments with a positive prior.
#[derive(Clone)]
pub struct EnvironmentClass {
    name: String,
    alphabet: Alphabet,
    members: Members,
}

impl fmt::Debug for EnvironmentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvironmentClass")
            .field("name", &self.name)
            .field("size", &self.len())
            .finish()
    }
}

impl EnvironmentClass {
    /// A finite class. Priors must be positive and sum to 1.
    pub fn finite(name: impl Into<String>, members: Vec<(EnvRef, f64)>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::spec("class has no members"));
        };
        let alphabet = first.0.alphabet().clone();
        if members.iter().any(|(e, _)| *e.alphabet() != alphabet) {
            return Err(Error::spec("class members must share one alphabet"));
        }
        if members.iter().any(|&(_, w)| !(w > 0.0 && w.is_finite())) {
            return Err(Error::spec("priors must be positive"));
        }
        let total: f64 = members.iter().map(|m| m.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::spec(format!("priors sum to {total}, not 1")));
        }
        let (envs, priors): (Vec<_>, Vec<_>) = members.into_iter().unzip();
        let mut suffix = vec![0.0; priors.len() + 1];
        for i in (0..priors.len()).rev() {
            suffix[i] = suffix[i + 1] + priors[i];
        }
        Ok(EnvironmentClass {
            name: name.into(),
            alphabet,
            members: Members::Finite {
                envs,
                priors,
                suffix,
            },
        })
    }

    /// A finite class with the uniform prior.
    pub fn uniform(name: impl Into<String>, envs: Vec<EnvRef>) -> Result<Self> {
        let w = 1.0 / envs.len() as f64;
        let members: Vec<(EnvRef, f64)> = envs.into_iter().map(|e| (e, w)).collect();
        // uniform weights can miss 1 by more than rounding allows for large n
        let total: f64 = members.iter().map(|m| m.1).sum();
        let members = members.into_iter().map(|(e, w)| (e, w / total)).collect();
        Self::finite(name, members)
    }

    /// A countably infinite class given lazily. `tail(n)` must bound
    /// `Σ_{i≥n} prior(i)` from above.
    pub fn countable(
        name: impl Into<String>,
        alphabet: Alphabet,
        member: MemberFn,
        prior: WeightFn,
        tail: WeightFn,
    ) -> Self {
        EnvironmentClass {
            name: name.into(),
            alphabet,
            members: Members::Countable {
                member,
                prior,
                tail,
            },
        }
    }

    /// Adds the Bayes mixture over the current members as one more member
    /// with prior `weight`, scaling the other priors by `1 - weight`.
    pub fn with_mixture_member(&self, weight: f64) -> Result<Self> {
        let Members::Finite { envs, priors, .. } = &self.members else {
            return Err(Error::spec("mixture members need a finite class"));
        };
        if !(weight > 0.0 && weight < 1.0) {
            return Err(Error::spec("mixture member weight must lie in (0, 1)"));
        }
        let inner: Vec<(EnvRef, f64)> = envs.iter().cloned().zip(priors.iter().copied()).collect();
        let xi = MixtureEnvironment::new(format!("xi[{}]", self.name), inner.clone())?;
        let mut members: Vec<(EnvRef, f64)> = inner
            .into_iter()
            .map(|(e, w)| (e, w * (1.0 - weight)))
            .collect();
        members.push((Arc::new(xi), weight));
        Self::finite(format!("{}+xi", self.name), members)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// Number of members, `None` when countably infinite.
    pub fn len(&self) -> Option<usize> {
        match &self.members {
            Members::Finite { envs, .. } => Some(envs.len()),
            Members::Countable { .. } => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.len().is_some()
    }

    pub fn member(&self, i: usize) -> Option<EnvRef> {
        match &self.members {
            Members::Finite { envs, .. } => envs.get(i).cloned(),
            Members::Countable { member, .. } => Some(member(i)),
        }
    }

    pub fn prior(&self, i: usize) -> f64 {
        match &self.members {
            Members::Finite { priors, .. } => priors.get(i).copied().unwrap_or(0.0),
            Members::Countable { prior, .. } => prior(i),
        }
    }

    /// Upper bound on the prior mass of members `n, n+1, ...`.
    pub fn prior_tail(&self, n: usize) -> f64 {
        match &self.members {
            Members::Finite { suffix, .. } => suffix.get(n).copied().unwrap_or(0.0),
            Members::Countable { tail, .. } => tail(n),
        }
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax(logs: &[f64]) -> Vec<f64> {
    let norm = log_sum_exp(logs.iter().copied());
    logs.iter().map(|l| (l - norm).exp()).collect()
}

/// `Σ_i w_i ν_i` over a finite list of members, as an environment.
///
/// Its state carries the unnormalized log posterior of every member, so
/// advancing it performs the Bayes update.
#[derive(Clone, Debug)]
pub struct MixtureEnvironment {
    name: String,
    alphabet: Alphabet,
    members: Vec<EnvRef>,
    log_priors: Vec<f64>,
}

impl MixtureEnvironment {
    pub fn new(name: impl Into<String>, members: Vec<(EnvRef, f64)>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::spec("mixture has no members"));
        };
        let alphabet = first.0.alphabet().clone();
        if members.iter().any(|(e, _)| *e.alphabet() != alphabet) {
            return Err(Error::spec("mixture members must share one alphabet"));
        }
        if members.iter().any(|&(_, w)| !(w > 0.0)) {
            return Err(Error::spec("mixture weights must be positive"));
        }
        let (members, weights): (Vec<_>, Vec<f64>) = members.into_iter().unzip();
        Ok(MixtureEnvironment {
            name: name.into(),
            alphabet,
            members,
            log_priors: weights.iter().map(|w| w.ln()).collect(),
        })
    }

    pub fn members(&self) -> &[EnvRef] {
        &self.members
    }

    fn parts(state: &EnvState) -> &MixtureState {
        match state {
            EnvState::Mixture(m) => m,
            other => panic!("mixture given foreign state {other:?}"),
        }
    }

    /// Normalized member weights at `state`.
    pub fn weights(state: &EnvState) -> Vec<f64> {
        softmax(&Self::parts(state).log_weights)
    }
}

impl Environment for MixtureEnvironment {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn initial_state(&self) -> EnvState {
        EnvState::Mixture(MixtureState {
            log_weights: self.log_priors.clone(),
            members: self.members.iter().map(|m| m.initial_state()).collect(),
        })
    }

    fn predict(&self, state: &EnvState, t: usize, action: Action) -> Vec<f64> {
        let parts = Self::parts(state);
        let weights = softmax(&parts.log_weights);
        let mut out = vec![0.0; self.alphabet.num_percepts()];
        for ((env, s), w) in self.members.iter().zip(&parts.members).zip(weights) {
            if w > 0.0 {
                for (o, p) in out.iter_mut().zip(env.predict(s, t, action)) {
                    *o += w * p;
                }
            }
        }
        let total: f64 = out.iter().sum();
        out.iter().map(|p| p / total).collect()
    }

    fn advance(&self, state: &mut EnvState, t: usize, action: Action, percept: Percept) {
        let EnvState::Mixture(parts) = state else {
            panic!("mixture given foreign state {state:?}");
        };
        for ((env, s), lw) in self
            .members
            .iter()
            .zip(parts.members.iter_mut())
            .zip(parts.log_weights.iter_mut())
        {
            if *lw == f64::NEG_INFINITY {
                continue;
            }
            *lw += env.percept_probability(s, t, action, percept).ln();
            env.advance(s, t, action, percept);
        }
    }

    /// Posterior (shifted so the largest log weight is 0) plus member keys.
    /// Falsified members contribute only a marker.
    fn key_of(&self, state: &EnvState, t: usize) -> Option<StateKey> {
        let parts = Self::parts(state);
        let max = parts
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut key = Vec::new();
        for ((env, s), &lw) in self
            .members
            .iter()
            .zip(&parts.members)
            .zip(&parts.log_weights)
        {
            if lw == f64::NEG_INFINITY {
                key.push(u64::MAX);
                continue;
            }
            let member = env.key_of(s, t)?;
            key.push((lw - max).to_bits());
            key.push(member.0.len() as u64);
            key.extend(member.0);
        }
        Some(StateKey(key))
    }
}

#[derive(Clone, Debug)]
struct FrontMember {
    env: EnvRef,
    log_prior: f64,
    log_lik: f64,
    state: EnvState,
}

impl FrontMember {
    fn log_weight(&self) -> f64 {
        self.log_prior + self.log_lik
    }
}

/// A posterior draw: the member index, the environment, and its state after
/// the current history.
#[derive(Clone, Debug)]
pub struct PosteriorSample {
    pub index: usize,
    pub env: EnvRef,
    pub state: EnvState,
}

/// Posterior over an [`EnvironmentClass`] after a history.
#[derive(Clone, Debug)]
pub struct BeliefState {
    class: Arc<EnvironmentClass>,
    history: History,
    front: Vec<FrontMember>,
    delta_mix: f64,
    delta_sample: f64,
}

impl BeliefState {
    /// The prior. Finite classes are enumerated completely; countable ones
    /// are enumerated until the tail bound is below the default `δ`.
    pub fn new(class: Arc<EnvironmentClass>) -> Result<Self> {
        Self::with_tolerances(class, DEFAULT_DELTA, DEFAULT_DELTA)
    }

    pub fn with_tolerances(
        class: Arc<EnvironmentClass>,
        delta_mix: f64,
        delta_sample: f64,
    ) -> Result<Self> {
        if !(delta_mix > 0.0 && delta_sample > 0.0) {
            return Err(Error::precondition("tail tolerances must be positive"));
        }
        let mut belief = BeliefState {
            class,
            history: History::new(),
            front: Vec::new(),
            delta_mix,
            delta_sample,
        };
        match belief.class.len() {
            Some(n) => belief.extend_front(n),
            None => {
                belief.extend_front(1);
                belief.resolve(delta_mix)?;
            }
        }
        Ok(belief)
    }

    pub fn class(&self) -> &Arc<EnvironmentClass> {
        &self.class
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn front_size(&self) -> usize {
        self.front.len()
    }

    pub fn member(&self, i: usize) -> Option<(&EnvRef, &EnvState)> {
        self.front.get(i).map(|m| (&m.env, &m.state))
    }

    /// `ln ν_i(e_{<t} | a_{<t})` for every front member.
    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.front.iter().map(|m| m.log_lik).collect()
    }

    fn log_front_mass(&self) -> f64 {
        log_sum_exp(self.front.iter().map(FrontMember::log_weight))
    }

    /// Upper bound on the posterior mass of members outside the front.
    pub fn tail_mass_bound(&self) -> f64 {
        let tail = self.class.prior_tail(self.front.len());
        if tail <= 0.0 {
            return 0.0;
        }
        (tail.ln() - self.log_front_mass()).exp()
    }

    /// Posterior weights of the front members, normalized over the front.
    pub fn posterior(&self) -> Vec<f64> {
        let norm = self.log_front_mass();
        self.front
            .iter()
            .map(|m| (m.log_weight() - norm).exp())
            .collect()
    }

    pub fn posterior_mass(&self, indices: &[usize]) -> Result<f64> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.front.len()) {
            return Err(Error::precondition(format!(
                "index {i} outside the enumerated front"
            )));
        }
        let w = self.posterior();
        Ok(indices.iter().map(|&i| w[i]).sum())
    }

    fn extend_front(&mut self, n: usize) {
        for i in self.front.len()..n {
            let env = self.class.member(i).expect("member within class size");
            let mut state = env.initial_state();
            let mut log_lik = 0.0;
            for (k, s) in self.history.steps().iter().enumerate() {
                if log_lik == f64::NEG_INFINITY {
                    break;
                }
                log_lik += env
                    .percept_probability(&state, k + 1, s.action, s.percept)
                    .ln();
                env.advance(&mut state, k + 1, s.action, s.percept);
            }
            self.front.push(FrontMember {
                log_prior: self.class.prior(i).ln(),
                env,
                log_lik,
                state,
            });
        }
    }

    /// Enumerates members until the tail bound drops below `delta`.
    pub fn resolve(&mut self, delta: f64) -> Result<()> {
        loop {
            let residual = self.tail_mass_bound();
            if residual < delta {
                return Ok(());
            }
            let full = self.class.len().is_some_and(|n| self.front.len() >= n);
            if full || self.front.len() >= MAX_FRONT {
                return Err(Error::TailNotResolved {
                    residual,
                    threshold: delta,
                    front: self.front.len(),
                });
            }
            self.extend_front(self.front.len() + 1);
        }
    }

    /// Conditions on the cycle `(action, percept)` at the current time.
    pub fn update_in_place(&mut self, action: Action, percept: Percept) -> Result<()> {
        let t = self.history.time();
        let probs: Vec<f64> = self
            .front
            .iter()
            .map(|m| {
                if m.log_lik == f64::NEG_INFINITY {
                    0.0
                } else {
                    m.env.percept_probability(&m.state, t, action, percept)
                }
            })
            .collect();
        let any_alive = self
            .front
            .iter()
            .zip(&probs)
            .any(|(m, &p)| p > 0.0 && m.log_lik > f64::NEG_INFINITY);
        if !any_alive && self.class.is_finite() {
            return Err(Error::ZeroLikelihood { t });
        }
        let backup = (!any_alive).then(|| self.clone());
        for (m, p) in self.front.iter_mut().zip(probs) {
            if m.log_lik == f64::NEG_INFINITY {
                continue;
            }
            m.log_lik += p.ln();
            if p > 0.0 {
                m.env.advance(&mut m.state, t, action, percept);
            }
        }
        self.history.push(action, percept);
        if !self.class.is_finite() {
            let result = if any_alive {
                self.resolve(self.delta_mix)
            } else {
                self.revive(t)
            };
            if let Err(e) = result {
                if let Some(b) = backup {
                    *self = b;
                }
                return Err(e);
            }
        }
        Ok(())
    }

    // Every enumerated member was falsified; look further out in the class.
    fn revive(&mut self, t: usize) -> Result<()> {
        while self.log_front_mass() == f64::NEG_INFINITY {
            if self.front.len() >= MAX_FRONT {
                return Err(Error::ZeroLikelihood { t });
            }
            self.extend_front(self.front.len() + 1);
        }
        self.resolve(self.delta_mix)
    }

    pub fn update(&self, action: Action, percept: Percept) -> Result<Self> {
        let mut next = self.clone();
        next.update_in_place(action, percept)?;
        Ok(next)
    }

    fn check_mix(&self) -> Result<()> {
        let residual = self.tail_mass_bound();
        if residual > self.delta_mix {
            return Err(Error::TailNotResolved {
                residual,
                threshold: self.delta_mix,
                front: self.front.len(),
            });
        }
        Ok(())
    }

    /// `ξ(· | æ_{<t} a)` over the front.
    pub fn mixture_predict(&self, action: Action) -> Result<Vec<f64>> {
        self.check_mix()?;
        let (env, state) = self.mixture()?;
        Ok(env.predict(&state, self.history.time(), action))
    }

    /// The front mixture as an environment, with its state after the current
    /// history. Planning in `ξ` runs on this pair.
    pub fn mixture(&self) -> Result<(MixtureEnvironment, EnvState)> {
        self.check_mix()?;
        let members = self
            .front
            .iter()
            .map(|m| (m.env.clone(), m.log_prior.exp()))
            .collect();
        let env = MixtureEnvironment::new(format!("xi[{}]", self.class.name()), members)?;
        let state = EnvState::Mixture(MixtureState {
            log_weights: self.front.iter().map(FrontMember::log_weight).collect(),
            members: self.front.iter().map(|m| m.state.clone()).collect(),
        });
        Ok((env, state))
    }

    /// Draws `ρ ~ w(· | æ_{<t})`, enumerating the front far enough that the
    /// unresolved tail is below `δ_sample`.
    pub fn sample_posterior(&mut self, rng: &mut SimRng) -> Result<PosteriorSample> {
        self.resolve(self.delta_sample)?;
        let index = rng::sample_index(&self.posterior(), rng);
        let m = &self.front[index];
        Ok(PosteriorSample {
            index,
            env: m.env.clone(),
            state: m.state.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{
        self, make_bernoulli_bandit, make_deterministic_bandit, RandomEnv, RandomPolicy,
    };
    use crate::interaction::{is_distribution, Policy, Reward};
    use crate::rng::Role;
    use proptest::prelude::*;

    fn coin(p: f64) -> EnvRef {
        Arc::new(make_bernoulli_bandit(&[p]).unwrap())
    }

    fn heads() -> Percept {
        Percept::reward_only(Reward::ONE)
    }

    fn pair(p1: f64, p2: f64) -> Arc<EnvironmentClass> {
        Arc::new(EnvironmentClass::finite("pair", vec![(coin(p1), 0.5), (coin(p2), 0.5)]).unwrap())
    }

    #[test]
    fn single_member_mixture_is_the_member() {
        let env = coin(0.3);
        let b = BeliefState::new(Arc::new(
            EnvironmentClass::finite("one", vec![(env.clone(), 1.0)]).unwrap(),
        ))
        .unwrap();
        let p = b.mixture_predict(Action(0)).unwrap();
        assert_eq!(p, env.predict(&env.initial_state(), 1, Action(0)));
    }

    #[test]
    fn mixture_of_opposed_deterministic_envs_is_uniform() {
        let levels = [Reward::ZERO, Reward::ONE];
        let a: EnvRef = Arc::new(make_deterministic_bandit("a", &[Reward::ZERO], &levels).unwrap());
        let b: EnvRef = Arc::new(make_deterministic_bandit("b", &[Reward::ONE], &levels).unwrap());
        let belief = BeliefState::new(Arc::new(
            EnvironmentClass::finite("ab", vec![(a, 0.5), (b, 0.5)]).unwrap(),
        ))
        .unwrap();
        assert_eq!(belief.mixture_predict(Action(0)).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn bayes_rule_arithmetic() {
        let b = BeliefState::new(pair(0.8, 0.2)).unwrap();
        let xi = b.mixture_predict(Action(0)).unwrap();
        assert!((xi[1] - 0.5).abs() < 1e-15);
        let post = b.update(Action(0), heads()).unwrap().posterior();
        assert!((post[0] - 0.8).abs() < 1e-12 && (post[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn falsified_member_drops_out() {
        let b = BeliefState::new(pair(0.5, 0.0)).unwrap();
        let b = b.update(Action(0), heads()).unwrap();
        assert_eq!(b.posterior(), vec![1.0, 0.0]);
        assert_eq!(b.log_likelihoods()[1], f64::NEG_INFINITY);
    }

    #[test]
    fn zero_likelihood_is_an_error() {
        let b = BeliefState::new(pair(0.0, 0.0)).unwrap();
        assert_eq!(
            b.update(Action(0), heads()).unwrap_err(),
            Error::ZeroLikelihood { t: 1 }
        );
    }

    #[test]
    fn identical_members_stay_uniform() {
        let class = Arc::new(
            EnvironmentClass::uniform("same", vec![coin(0.3), coin(0.3), coin(0.3)]).unwrap(),
        );
        let mut b = BeliefState::new(class).unwrap();
        for i in 0..50 {
            let r = if i % 3 == 0 {
                Reward::ONE
            } else {
                Reward::ZERO
            };
            b.update_in_place(Action(0), Percept::reward_only(r))
                .unwrap();
            for w in b.posterior() {
                assert!((w - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_frequencies_follow_the_posterior() {
        let mut b = BeliefState::new(pair(0.8, 0.2))
            .unwrap()
            .update(Action(0), heads())
            .unwrap();
        let mut rng = rng::stream(7, 0, Role::Agent);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| b.sample_posterior(&mut rng).unwrap().index == 0)
            .count();
        let freq = hits as f64 / n as f64;
        let sd = (0.8 * 0.2 / n as f64).sqrt();
        assert!((freq - 0.8).abs() < 3.0 * sd, "{freq}");
    }

    #[test]
    fn point_mass_posterior_always_samples_its_member() {
        let mut b = BeliefState::new(pair(1.0, 0.0))
            .unwrap()
            .update(Action(0), heads())
            .unwrap();
        let mut rng = rng::stream(1, 0, Role::Agent);
        assert!((0..1000).all(|_| b.sample_posterior(&mut rng).unwrap().index == 0));
    }

    #[test]
    fn countable_front_resolves_geometric_tail() {
        let class = Arc::new(envs::make_example1_countable_class());
        let mut b = BeliefState::with_tolerances(class, 1e-3, 1e-6).unwrap();
        let mut rng = rng::stream(0, 0, Role::Agent);
        b.sample_posterior(&mut rng).unwrap();
        assert!(b.front_size() >= 20, "{}", b.front_size());
        assert!(b.tail_mass_bound() < 1e-6);
    }

    #[test]
    fn unlocked_reward_identifies_member() {
        // only ν_1 is unlocked at t = 1, so only it pays on the third α
        let class = Arc::new(envs::make_example1_countable_class());
        let mut b = BeliefState::new(class).unwrap();
        let z = Percept::reward_only(Reward::ZERO);
        for _ in 0..2 {
            b.update_in_place(envs::ALPHA, z).unwrap();
        }
        b.update_in_place(envs::ALPHA, Percept::reward_only(Reward::ONE))
            .unwrap();
        let w = b.posterior();
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_mass_bookkeeping() {
        let class = Arc::new(envs::make_example1_class(6).unwrap());
        let b = BeliefState::new(class).unwrap();
        assert_eq!(b.posterior_mass(&[]).unwrap(), 0.0);
        let all: Vec<usize> = (0..b.front_size()).collect();
        let total = b.posterior_mass(&all).unwrap();
        assert!(total <= 1.0 + 1e-12 && total >= 1.0 - b.tail_mass_bound() - 1e-12);
        let s = b.posterior_mass(&[0, 2, 4]).unwrap();
        let c = b.posterior_mass(&[1, 3, 5, 6]).unwrap();
        assert!((s + c + b.tail_mass_bound() - 1.0).abs() < 1e-9);
        assert!(b.posterior_mass(&[99]).is_err());
    }

    #[test]
    fn mixture_member_keeps_a_valid_prediction() {
        let class = envs::make_example1_class(3)
            .unwrap()
            .with_mixture_member(0.25)
            .unwrap();
        assert_eq!(class.len(), Some(5));
        let b = BeliefState::new(Arc::new(class)).unwrap();
        let p = b.mixture_predict(envs::ALPHA).unwrap();
        assert!(is_distribution(&p, 1e-12));
    }

    fn random_setup(seed: u64, size: usize) -> (Arc<EnvironmentClass>, RandomPolicy) {
        let alphabet = Alphabet::new(2, 1, vec![Reward::ZERO, Reward::HALF, Reward::ONE]).unwrap();
        let class = envs::make_random_class(seed, size, &alphabet, None, 0.25).unwrap();
        (Arc::new(class), RandomPolicy::new(seed ^ 0xff, 2, false))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn posterior_is_a_martingale(seed in any::<u64>(), size in 2usize..5, len in 0usize..5) {
            let (class, policy) = random_setup(seed, size);
            let truth = class.member((seed % size as u64) as usize).unwrap();
            let h = crate::interaction::rollout(&truth, &policy, len, seed).unwrap();
            let mut b = BeliefState::new(class.clone()).unwrap();
            for s in h.steps() {
                b.update_in_place(s.action, s.percept).unwrap();
            }
            let pi = policy.action_distribution(&h).unwrap();
            let before = b.posterior();
            let mut expected = vec![0.0; before.len()];
            for a in class.alphabet().actions() {
                let xi = b.mixture_predict(a).unwrap();
                for (ei, &pe) in xi.iter().enumerate() {
                    if pi[a.0] * pe == 0.0 {
                        continue;
                    }
                    let next = b.update(a, class.alphabet().percept(ei)).unwrap().posterior();
                    for (x, w) in expected.iter_mut().zip(next) {
                        *x += pi[a.0] * pe * w;
                    }
                }
            }
            for (x, w) in expected.iter().zip(&before) {
                prop_assert!((x - w).abs() < 1e-9, "{expected:?} vs {before:?}");
            }
        }

        #[test]
        fn posterior_ignores_action_probabilities(seed in any::<u64>(), len in 1usize..12) {
            let (class, policy) = random_setup(seed, 3);
            let truth = class.member(0).unwrap();
            let h = crate::interaction::rollout(&truth, &policy, len, seed).unwrap();
            // the same cycles, reached once by the stochastic policy and once
            // as if forced deterministically, give one posterior
            let mut b = BeliefState::new(class.clone()).unwrap();
            for s in h.steps() {
                b.update_in_place(s.action, s.percept).unwrap();
            }
            let mut direct = vec![0.0; 3];
            for (i, d) in direct.iter_mut().enumerate() {
                let env = class.member(i).unwrap();
                let forced = crate::interaction::FnPolicy::new(2, {
                    let h = h.clone();
                    move |p: &History| h.steps()[p.len()].action
                });
                let stochastic = crate::interaction::joint_probability(&env, &policy, &h).unwrap();
                let det = crate::interaction::joint_probability(&env, &forced, &h).unwrap();
                prop_assert!(det >= stochastic);
                *d = class.prior(i) * det;
            }
            let z: f64 = direct.iter().sum();
            for (w, d) in b.posterior().iter().zip(&direct) {
                prop_assert!((w - d / z).abs() < 1e-9);
            }
        }

        #[test]
        fn mixture_dominates_each_member(seed in any::<u64>(), len in 0usize..10) {
            let (class, policy) = random_setup(seed, 4);
            let truth = class.member(1).unwrap();
            let h = crate::interaction::rollout(&truth, &policy, len, seed).unwrap();
            let xi = MixtureEnvironment::new(
                "xi",
                (0..4).map(|i| (class.member(i).unwrap(), class.prior(i))).collect(),
            ).unwrap();
            let p_xi = crate::interaction::joint_probability(&xi, &policy, &h).unwrap();
            for i in 0..4 {
                let env = class.member(i).unwrap();
                let p = crate::interaction::joint_probability(&env, &policy, &h).unwrap();
                prop_assert!(p_xi >= class.prior(i) * p * (1.0 - 1e-12));
            }
        }

        #[test]
        fn log_likelihoods_never_increase(seed in any::<u64>()) {
            let (class, policy) = random_setup(seed, 3);
            let env = RandomEnv::new(seed, class.alphabet().clone(), Some(4), 0.0);
            let h = crate::interaction::rollout(&env, &policy, 15, seed).unwrap();
            let mut b = BeliefState::new(class).unwrap();
            let mut prev = b.log_likelihoods();
            for s in h.steps() {
                match b.update_in_place(s.action, s.percept) {
                    Ok(()) => {}
                    Err(Error::ZeroLikelihood { .. }) => break,
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
                let now = b.log_likelihoods();
                prop_assert!(now.iter().zip(&prev).all(|(a, b)| a <= b));
                prev = now;
            }
        }
    }
}
