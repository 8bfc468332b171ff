//! General reinforcement learning in history-based environments: Bayesian
//! mixtures over environment classes, exact expectimax planning, Thompson
//! sampling, and the metrics used to study asymptotic optimality.

pub mod agents;
pub mod bayes;
pub mod discount;
pub mod envs;
pub mod error;
pub mod interaction;
pub mod metrics;
pub mod planner;
pub mod rng;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
