//! Running one experiment: simulate every seed, evaluate metrics at the
//! checkpoints, aggregate, and write the CSV and metadata sidecar.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use grl::agents::{AgentContext, BlockRecord, Episode};
use grl::bayes::{EnvRef, EnvironmentClass};
use grl::discount::{effective_horizon, Discount};
use grl::interaction::{History, Policy};
use grl::metrics::{self, Estimate, MetricPoint, MetricSeries};
use grl::planner::{Planner, DEFAULT_NODE_BUDGET};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EnvSpec, ExperimentConfig, MetricKind};
use crate::error::HarnessError;

/// Written into the sidecar so readers know what the continuation metrics
/// measure.
pub const CONTINUATION_NOTE: &str = "continuation_gap and bayes_tv evaluate the policy the agent is committed to at t: \
for Thompson sampling, the current sample's block policy, continued as if later draws returned the same sample. \
value_gap uses the return actually collected over [t, m_t], so resampling is included there.";

/// Recoverability compares infinite-horizon values; its window runs until
/// the remaining discount mass falls below this fraction.
pub const RECOVERABILITY_EPS: f64 = 1e-12;

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides `n_seeds`.
    pub seeds: Option<usize>,
    /// Worker threads; `None` uses rayon's default.
    pub workers: Option<usize>,
    pub per_seed: bool,
}

/// Everything shared by the seeds of a run.
struct Setup {
    class: Option<Arc<EnvironmentClass>>,
    truth: EnvRef,
    truth_index: Option<usize>,
    discount: Arc<dyn Discount>,
    planner: Planner,
    /// `m_t` per checkpoint.
    horizons: Vec<usize>,
}

impl Setup {
    fn new(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        let class = config
            .class
            .as_ref()
            .map(|c| c.build())
            .transpose()?
            .map(Arc::new);
        let truth = config.environment.build(class.as_deref())?;
        if let Some(c) = &class {
            if c.alphabet() != truth.alphabet() {
                return Err(HarnessError::invalid(
                    "the environment and the class use different alphabets",
                ));
            }
        }
        let discount = config.discount.build()?;
        let horizons = config
            .checkpoints
            .iter()
            .map(|&t| Ok(t + effective_horizon(discount.as_ref(), t, config.eval_eps)?))
            .collect::<Result<Vec<_>, grl::Error>>()?;
        Ok(Setup {
            class,
            truth,
            truth_index: match config.environment {
                EnvSpec::ClassMember { index } => Some(index),
                _ => None,
            },
            discount,
            planner: Planner::with_budget(config.node_budget.unwrap_or(DEFAULT_NODE_BUDGET)),
            horizons,
        })
    }

    fn context(&self, config: &ExperimentConfig, seed: u64) -> AgentContext {
        AgentContext {
            class: self.class.clone(),
            truth: self.truth.clone(),
            discount: self.discount.clone(),
            planner: self.planner,
            base_seed: config.base_seed,
            seed,
        }
    }
}

/// Per-seed values, indexed `[metric][checkpoint]`; exact metrics are left
/// empty.
struct SeedResult {
    values: Vec<Vec<f64>>,
    blocks: Vec<BlockRecord>,
}

fn run_seed(
    config: &ExperimentConfig,
    setup: &Setup,
    seed: u64,
) -> Result<SeedResult, HarnessError> {
    let at = |t: usize| move |source: grl::Error| HarnessError::Trajectory { seed, t, source };
    let mut agent = config
        .agent
        .build(&setup.context(config, seed))
        .map_err(at(1))?;
    let env = setup.truth.as_ref();
    let d = setup.discount.as_ref();
    let cps = &config.checkpoints;
    let wants = |m: MetricKind| config.metrics.contains(&m);

    let mut end = 0;
    for (i, &t) in cps.iter().enumerate() {
        if wants(MetricKind::ValueGap) {
            end = end.max(setup.horizons[i]);
        }
        if wants(MetricKind::Regret) || wants(MetricKind::RegretRate) {
            end = end.max(t);
        }
        if config.metrics.iter().any(|m| !m.is_exact()) {
            end = end.max(t - 1);
        }
    }

    let mut best_at = vec![0.0; cps.len()];
    let mut cont_gap = vec![0.0; cps.len()];
    let mut tv = vec![0.0; cps.len()];
    let mut truth_mass = vec![0.0; cps.len()];
    let mut reward_sums = vec![0.0; cps.len()];
    let mut ep = Episode::new(env, config.base_seed, seed);
    let mut next_cp = 0;
    loop {
        let t = ep.time();
        // metrics on æ_{<t}
        if let Some(i) = cps.iter().position(|&c| c == t) {
            let m = setup.horizons[i];
            let h = ep.history().clone();
            if wants(MetricKind::ValueGap) {
                let window = grl::discount::Window::new(d, t, m);
                best_at[i] = setup
                    .planner
                    .plan(
                        env,
                        ep.env_state(),
                        &h,
                        &window,
                        grl::planner::Objective::Max,
                        None,
                    )
                    .map_err(at(t))?
                    .root_value;
            }
            if wants(MetricKind::ContinuationGap) || wants(MetricKind::BayesTv) {
                let cont = agent.continuation(&h).map_err(at(t))?;
                if wants(MetricKind::ContinuationGap) {
                    cont_gap[i] = metrics::value_gap_with(
                        &setup.planner,
                        env,
                        ep.env_state(),
                        cont.as_ref(),
                        d,
                        &h,
                        m,
                    )
                    .map_err(at(t))?;
                }
                if wants(MetricKind::BayesTv) {
                    let belief = agent.belief().expect("validated: agent has a posterior");
                    let policy: &dyn Policy = cont.as_ref();
                    tv[i] = metrics::bayes_expected_tv(&setup.planner, belief, policy, m)
                        .map_err(at(t))?;
                }
            }
            if wants(MetricKind::PosteriorTruth) {
                let belief = agent.belief().expect("validated: agent has a posterior");
                let index = setup
                    .truth_index
                    .expect("validated: truth is a class member");
                truth_mass[i] = if index < belief.front_size() {
                    belief.posterior_mass(&[index]).map_err(at(t))?
                } else {
                    0.0
                };
            }
        }
        // regret at checkpoint t needs r_1..r_t, i.e. time t + 1
        while next_cp < cps.len() && cps[next_cp] < t {
            reward_sums[next_cp] = ep.history().prefix(cps[next_cp]).total_reward();
            next_cp += 1;
        }
        if t > end {
            break;
        }
        ep.step(agent.as_mut()).map_err(at(t))?;
    }

    let mut values = Vec::with_capacity(config.metrics.len());
    for &metric in &config.metrics {
        let col: Vec<f64> = match metric {
            MetricKind::ValueGap => cps
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    Ok(best_at[i]
                        - metrics::discounted_return(d, ep.history(), t, setup.horizons[i])
                            .map_err(at(t))?)
                })
                .collect::<Result<_, HarnessError>>()?,
            MetricKind::ContinuationGap => cont_gap.clone(),
            MetricKind::BayesTv => tv.clone(),
            MetricKind::PosteriorTruth => truth_mass.clone(),
            MetricKind::Regret | MetricKind::RegretRate => cps
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let best =
                        metrics::optimal_reward_sum(&setup.planner, env, t).map_err(at(t))?;
                    let r = best - reward_sums[i];
                    Ok(if metric == MetricKind::Regret {
                        r
                    } else {
                        r / t as f64
                    })
                })
                .collect::<Result<_, HarnessError>>()?,
            MetricKind::ExactRegret | MetricKind::Recoverability => Vec::new(),
        };
        values.push(col);
    }
    Ok(SeedResult {
        values,
        blocks: agent.blocks().to_vec(),
    })
}

fn exact_series(
    config: &ExperimentConfig,
    setup: &Setup,
    metric: MetricKind,
) -> Result<Vec<f64>, HarnessError> {
    let at = |t: usize| move |source: grl::Error| HarnessError::Trajectory { seed: 0, t, source };
    match metric {
        MetricKind::ExactRegret => {
            let mut agent = config.agent.build(&setup.context(config, 0))?;
            let policy = agent.continuation(&History::new())?;
            config
                .checkpoints
                .iter()
                .map(|&t| {
                    metrics::exact_regret(&setup.planner, setup.truth.as_ref(), policy.as_ref(), t)
                        .map_err(at(t))
                })
                .collect()
        }
        MetricKind::Recoverability => config
            .checkpoints
            .iter()
            .map(|&t| {
                let m = t + effective_horizon(setup.discount.as_ref(), t, RECOVERABILITY_EPS)
                    .map_err(at(t))?;
                metrics::recoverability_gap(&setup.planner, &setup.truth, &setup.discount, t, m)
                    .map_err(at(t))
            })
            .collect(),
        _ => unreachable!("only exact metrics are computed once"),
    }
}

/// The outcome of one experiment.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub series: Vec<MetricSeries>,
    /// Per-seed values `[seed][metric][checkpoint]`; exact metrics repeat
    /// the shared value.
    pub per_seed: Vec<Vec<Vec<f64>>>,
    pub blocks: Vec<(u64, BlockRecord)>,
    pub wall_clock_seconds: f64,
}

/// Simulates every seed and aggregates; writes nothing.
pub fn execute(config: &ExperimentConfig, options: &RunOptions) -> Result<RunRecord, HarnessError> {
    let mut config = config.clone();
    if let Some(n) = options.seeds {
        config.n_seeds = n;
    }
    let config = config.resolve()?;
    let started = Instant::now();
    let setup = Setup::new(&config)?;
    let work = || -> Result<(Vec<SeedResult>, Vec<Option<Vec<f64>>>), HarnessError> {
        let seeds = (0..config.n_seeds as u64)
            .into_par_iter()
            .map(|seed| run_seed(&config, &setup, seed))
            .collect::<Result<Vec<_>, _>>()?;
        let exact = config
            .metrics
            .iter()
            .map(|&m| {
                m.is_exact()
                    .then(|| exact_series(&config, &setup, m))
                    .transpose()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((seeds, exact))
    };
    let (seeds, exact) = match options.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| HarnessError::invalid(format!("worker pool: {e}")))?
            .install(work)?,
        None => work()?,
    };

    let mut series = Vec::new();
    let mut per_seed: Vec<Vec<Vec<f64>>> = seeds.iter().map(|s| s.values.clone()).collect();
    for (k, &metric) in config.metrics.iter().enumerate() {
        let mut s = MetricSeries::new(metric.name());
        for (i, &t) in config.checkpoints.iter().enumerate() {
            let point = match &exact[k] {
                Some(values) => MetricPoint {
                    t,
                    value: values[i],
                    ci_halfwidth: None,
                },
                None => {
                    let samples: Vec<f64> = seeds.iter().map(|r| r.values[k][i]).collect();
                    if samples.len() >= 2 {
                        let e = Estimate::from_samples(&samples)?;
                        MetricPoint {
                            t,
                            value: e.mean,
                            ci_halfwidth: Some(e.ci_halfwidth),
                        }
                    } else {
                        MetricPoint {
                            t,
                            value: samples[0],
                            ci_halfwidth: None,
                        }
                    }
                }
            };
            s.push(point)?;
        }
        if let Some(values) = &exact[k] {
            for row in per_seed.iter_mut() {
                row[k] = values.clone();
            }
        }
        series.push(s);
    }
    let blocks = seeds
        .iter()
        .enumerate()
        .flat_map(|(seed, r)| r.blocks.iter().map(move |b| (seed as u64, b.clone())))
        .collect();
    Ok(RunRecord {
        config_hash: config.hash(),
        config,
        series,
        per_seed,
        blocks,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Formats a value so that identical computations give identical text.
fn fmt(x: f64) -> String {
    format!("{x:?}")
}

pub const CSV_HEADER: [&str; 5] = ["metric", "t", "mean", "ci_halfwidth", "n_seeds"];

pub fn write_csv(record: &RunRecord, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for s in &record.series {
        for p in &s.points {
            w.write_record([
                s.name.clone(),
                p.t.to_string(),
                fmt(p.value),
                p.ci_halfwidth.map(fmt).unwrap_or_default(),
                record.config.n_seeds.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

fn write_per_seed(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut paths = Vec::new();
    for (seed, values) in record.per_seed.iter().enumerate() {
        let path = dir.join(format!("{}.seed{seed}.csv", record.config.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["metric", "t", "value"])?;
        for (k, metric) in record.config.metrics.iter().enumerate() {
            for (i, t) in record.config.checkpoints.iter().enumerate() {
                w.write_record([metric.name().to_string(), t.to_string(), fmt(values[k][i])])?;
            }
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

fn write_blocks(record: &RunRecord, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed",
        "start",
        "end",
        "sampled_index",
        "eps",
        "truncation_bound",
    ])?;
    for (seed, b) in &record.blocks {
        w.write_record([
            seed.to_string(),
            b.start.to_string(),
            b.end.to_string(),
            b.sampled_index.to_string(),
            fmt(b.eps),
            fmt(b.truncation_bound),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

#[derive(Serialize)]
struct Sidecar<'a> {
    name: &'a str,
    config_hash: &'a str,
    csv: String,
    blocks: String,
    grl_version: &'static str,
    harness_version: &'static str,
    wall_clock_seconds: f64,
    continuation_note: &'static str,
    config: &'a ExperimentConfig,
}

/// Output file locations of a written run.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub blocks: PathBuf,
    pub per_seed: Vec<PathBuf>,
}

pub fn write_outputs(
    record: &RunRecord,
    out_dir: &Path,
    per_seed: bool,
) -> Result<RunFiles, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let name = &record.config.name;
    let files = RunFiles {
        csv: out_dir.join(format!("{name}.csv")),
        sidecar: out_dir.join(format!("{name}.toml")),
        blocks: out_dir.join(format!("{name}.blocks.csv")),
        per_seed: if per_seed {
            write_per_seed(record, out_dir)?
        } else {
            Vec::new()
        },
    };
    write_csv(record, &files.csv)?;
    write_blocks(record, &files.blocks)?;
    let sidecar = Sidecar {
        name,
        config_hash: &record.config_hash,
        csv: format!("{name}.csv"),
        blocks: format!("{name}.blocks.csv"),
        grl_version: grl::VERSION,
        harness_version: env!("CARGO_PKG_VERSION"),
        wall_clock_seconds: record.wall_clock_seconds,
        continuation_note: CONTINUATION_NOTE,
        config: &record.config,
    };
    let text =
        toml::to_string(&sidecar).map_err(|e| HarnessError::invalid(format!("sidecar: {e}")))?;
    std::fs::write(&files.sidecar, text).map_err(|e| HarnessError::io(&files.sidecar, e))?;
    Ok(files)
}

/// `execute` followed by `write_outputs`.
pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<(RunRecord, RunFiles), HarnessError> {
    let record = execute(config, options)?;
    let files = write_outputs(&record, out_dir, options.per_seed)?;
    Ok((record, files))
}
