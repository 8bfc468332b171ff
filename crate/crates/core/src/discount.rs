//! Discount functions `γ_t`, their tails `Γ_t = Σ_{k≥t} γ_k`, effective
//! horizons, and the weight construction used to convert discounted value
//! bounds into undiscounted regret bounds.
//!
//! Everything is computed in the log domain: geometric discounting at
//! `t = 2^14` underflows `f64` long before the ratios we care about do.

use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when comparing tail ratios against `ε`, so that ratios which
/// equal `ε` in exact arithmetic are not pushed over by rounding.
const RATIO_SLACK: f64 = 1e-10;

pub trait Discount: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// `ln γ_t`; `-∞` when `γ_t = 0`.
    fn ln_gamma(&self, t: usize) -> f64;

    /// `ln Γ_t`; `-∞` when `Γ_t = 0`.
    fn ln_tail(&self, t: usize) -> f64;

    /// `ln(Γ_{t+k} / Γ_t)`.
    fn ln_tail_ratio(&self, t: usize, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let later = self.ln_tail(t + k);
        if later == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        later - self.ln_tail(t)
    }

    fn gamma(&self, t: usize) -> f64 {
        self.ln_gamma(t).exp()
    }

    fn tail(&self, t: usize) -> f64 {
        self.ln_tail(t).exp()
    }
}

/// `γ_t = γ^t`, `Γ_t = γ^t / (1 - γ)`.
#[derive(Clone, Debug)]
pub struct Geometric {
    gamma: f64,
}

impl Geometric {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::spec(format!(
                "geometric discount needs 0 < γ < 1, got {gamma}"
            )));
        }
        Ok(Geometric { gamma })
    }

    pub fn factor(&self) -> f64 {
        self.gamma
    }
}

impl Discount for Geometric {
    fn name(&self) -> String {
        format!("geometric{{gamma={}}}", self.gamma)
    }

    fn ln_gamma(&self, t: usize) -> f64 {
        t as f64 * self.gamma.ln()
    }

    fn ln_tail(&self, t: usize) -> f64 {
        t as f64 * self.gamma.ln() - (-self.gamma).ln_1p()
    }

    fn ln_tail_ratio(&self, _t: usize, k: usize) -> f64 {
        k as f64 * self.gamma.ln()
    }

    fn gamma(&self, t: usize) -> f64 {
        self.gamma.powi(t as i32)
    }
}

/// `γ_t = e^{-√t} / √t`, whose effective horizon grows like `√t`.
///
/// `Γ_t` has no closed form. It is summed directly at an anchor time until the
/// integral tail bound `Σ_{k>K} γ_k ≤ 2 e^{-√K}` drops below `1e-16` of the
/// partial sum, then filled downwards with `Γ_t = γ_t + Γ_{t+1}`.
#[derive(Debug, Default)]
pub struct SqrtExp {
    // ln Γ_t for t = 1..=len, stored at index t - 1
    ln_tails: RwLock<Vec<f64>>,
}

impl SqrtExp {
    pub fn new() -> Self {
        SqrtExp::default()
    }

    fn ln_gamma_exact(t: usize) -> f64 {
        let t = t as f64;
        -t.sqrt() - 0.5 * t.ln()
    }

    /// `ln Γ_n` by direct certified summation.
    fn ln_tail_direct(n: usize) -> f64 {
        let root_n = (n as f64).sqrt();
        let mut sum = 0.0;
        let mut k = n;
        loop {
            let rk = (k as f64).sqrt();
            sum += (root_n - rk).exp() / rk;
            // Σ_{j>k} γ_j ≤ ∫_k^∞ γ = 2 e^{-√k}, scaled by e^{√n}
            let bound = 2.0 * (root_n - rk).exp();
            if bound <= 1e-16 * sum {
                break;
            }
            k += 1;
        }
        -root_n + sum.ln()
    }

    fn ensure(&self, t: usize) {
        if self.ln_tails.read().expect("lock poisoned").len() >= t {
            return;
        }
        let mut table = self.ln_tails.write().expect("lock poisoned");
        let have = table.len();
        if have >= t {
            return;
        }
        let target = (2 * have).max(t + 1024);
        let mut fresh = vec![0.0; target - have];
        let mut ln_next = Self::ln_tail_direct(target + 1);
        for s in (have + 1..=target).rev() {
            let ln_g = Self::ln_gamma_exact(s);
            ln_next += (ln_g - ln_next).exp().ln_1p();
            fresh[s - have - 1] = ln_next;
        }
        table.extend(fresh);
    }
}

impl Discount for SqrtExp {
    fn name(&self) -> String {
        "sqrt_exp".to_string()
    }

    fn ln_gamma(&self, t: usize) -> f64 {
        Self::ln_gamma_exact(t)
    }

    fn ln_tail(&self, t: usize) -> f64 {
        self.ensure(t);
        self.ln_tails.read().expect("lock poisoned")[t - 1]
    }
}

/// Explicit `γ_1..γ_n` followed by the geometric continuation
/// `γ_t = γ_n r^{t-n}` for `t > n`.
#[derive(Clone, Debug)]
pub struct Table {
    values: Vec<f64>,
    tail_ratio: f64,
    // Γ_t for t = 1..=n+1
    tails: Vec<f64>,
}

impl Table {
    pub fn new(values: Vec<f64>, tail_ratio: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::spec("table discount needs at least one value"));
        }
        if values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::spec(
                "table discount values must be finite and nonnegative",
            ));
        }
        if !(0.0..1.0).contains(&tail_ratio) {
            return Err(Error::spec(format!(
                "table tail ratio must lie in [0, 1), got {tail_ratio}"
            )));
        }
        let n = values.len();
        let mut tails = vec![0.0; n + 1];
        tails[n] = values[n - 1] * tail_ratio / (1.0 - tail_ratio);
        for t in (0..n).rev() {
            tails[t] = values[t] + tails[t + 1];
        }
        Ok(Table {
            values,
            tail_ratio,
            tails,
        })
    }
}

impl Discount for Table {
    fn name(&self) -> String {
        format!(
            "table{{n={},tail_ratio={}}}",
            self.values.len(),
            self.tail_ratio
        )
    }

    fn ln_gamma(&self, t: usize) -> f64 {
        let n = self.values.len();
        if t <= n {
            self.values[t - 1].ln()
        } else {
            self.values[n - 1].ln() + (t - n) as f64 * self.tail_ratio.ln()
        }
    }

    fn ln_tail(&self, t: usize) -> f64 {
        let n = self.values.len();
        if t <= n + 1 {
            self.tails[t - 1].ln()
        } else {
            self.tails[n].ln() + (t - n - 1) as f64 * self.tail_ratio.ln()
        }
    }
}

/// Named discount schedules as they appear in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscountSpec {
    Geometric { gamma: f64 },
    SqrtExp,
    Table { values: Vec<f64>, tail_ratio: f64 },
}

impl DiscountSpec {
    pub fn build(&self) -> Result<Arc<dyn Discount>> {
        Ok(match self {
            DiscountSpec::Geometric { gamma } => Arc::new(Geometric::new(*gamma)?),
            DiscountSpec::SqrtExp => Arc::new(SqrtExp::new()),
            DiscountSpec::Table { values, tail_ratio } => {
                Arc::new(Table::new(values.clone(), *tail_ratio)?)
            }
        })
    }
}

/// The sequence `ε_t` controlling how far ahead the agents plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpsilonSchedule {
    /// `ε_t = min(cap, t^{-1/2})`.
    InvSqrt { cap: f64 },
    /// `ε_t = min(cap, scale · t^{-exponent})`.
    Power { scale: f64, exponent: f64, cap: f64 },
    /// Fixed `ε`. Does not vanish; useful for controlled block lengths.
    Constant { eps: f64 },
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule::InvSqrt { cap: 0.5 }
    }
}

impl EpsilonSchedule {
    pub fn eps(&self, t: usize) -> f64 {
        let t = t as f64;
        match *self {
            EpsilonSchedule::InvSqrt { cap } => cap.min(t.powf(-0.5)),
            EpsilonSchedule::Power {
                scale,
                exponent,
                cap,
            } => cap.min(scale * t.powf(-exponent)),
            EpsilonSchedule::Constant { eps } => eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            EpsilonSchedule::InvSqrt { cap } => cap > 0.0,
            EpsilonSchedule::Power {
                scale,
                exponent,
                cap,
            } => scale > 0.0 && exponent > 0.0 && cap > 0.0,
            EpsilonSchedule::Constant { eps } => eps > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::spec(format!("invalid epsilon schedule {self:?}")))
        }
    }

    /// Whether `ε_t → 0`.
    pub fn vanishes(&self) -> bool {
        !matches!(self, EpsilonSchedule::Constant { .. })
    }
}

/// `H_t(ε) = min { k : Γ_{t+k} / Γ_t ≤ ε }`.
pub fn effective_horizon(d: &dyn Discount, t: usize, eps: f64) -> Result<usize> {
    if t == 0 {
        return Err(Error::precondition("time is 1-based"));
    }
    if !(eps > 0.0) {
        return Err(Error::precondition(format!(
            "effective horizon needs ε > 0, got {eps}"
        )));
    }
    if d.ln_tail(t) == f64::NEG_INFINITY {
        return Err(Error::UndefinedHorizon { t });
    }
    let ln_eps = eps.ln();
    let reached = |k: usize| d.ln_tail_ratio(t, k) <= ln_eps + RATIO_SLACK;
    if reached(0) {
        return Ok(0);
    }
    // Γ_{t+k}/Γ_t is nonincreasing in k: gallop, then bisect.
    let mut hi = 1usize;
    while !reached(hi) {
        if hi > 1 << 40 {
            return Err(Error::UndefinedHorizon { t });
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reached(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Which part of the discount regularity assumption failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssumptionItem {
    /// `γ_t > 0`
    Positive,
    /// `γ_t` monotone decreasing
    Monotone,
    /// `H_t(ε) ∈ o(t)`
    SublinearHorizon,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub item: AssumptionItem,
    pub t: usize,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssumptionReport {
    pub violations: Vec<Violation>,
}

impl AssumptionReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn holds(&self, item: AssumptionItem) -> bool {
        !self.violations.iter().any(|v| v.item == item)
    }

    pub fn first(&self, item: AssumptionItem) -> Option<&Violation> {
        self.violations.iter().find(|v| v.item == item)
    }
}

/// Finite-horizon falsification check of the discount regularity assumption.
///
/// (a) and (b) are checked exhaustively on `1..=t_max`. The `o(t)` condition
/// is checked on the doubling grid: for each grid point `t` with `4t ≤ t_max`
/// the normalized horizon `H_t(ε)/t` must at least halve by `4t`.
pub fn check_assumption_gamma(
    d: &dyn Discount,
    t_max: usize,
    eps_list: &[f64],
) -> AssumptionReport {
    let mut report = AssumptionReport::default();
    let mut prev = f64::INFINITY;
    let mut first_zero = None;
    for t in 1..=t_max {
        let g = d.ln_gamma(t);
        if g == f64::NEG_INFINITY && first_zero.is_none() {
            first_zero = Some(t);
            report.violations.push(Violation {
                item: AssumptionItem::Positive,
                t,
                detail: "γ_t = 0".into(),
            });
        }
        if g > prev {
            report.violations.push(Violation {
                item: AssumptionItem::Monotone,
                t,
                detail: format!("γ_{t} > γ_{}", t - 1),
            });
            break;
        }
        prev = g;
    }
    for &eps in eps_list {
        let mut t = 1;
        while 4 * t <= t_max {
            let h = |s: usize| effective_horizon(d, s, eps);
            match (h(t), h(4 * t)) {
                (Ok(a), Ok(b)) => {
                    let (near, far) = (a as f64 / t as f64, b as f64 / (4 * t) as f64);
                    if far > 0.5 * near {
                        report.violations.push(Violation {
                            item: AssumptionItem::SublinearHorizon,
                            t,
                            detail: format!("ε={eps}: H_t/t={near} but H_4t/4t={far}"),
                        });
                        break;
                    }
                }
                (Err(e), _) | (_, Err(e)) => {
                    report.violations.push(Violation {
                        item: AssumptionItem::SublinearHorizon,
                        t,
                        detail: format!("ε={eps}: {e}"),
                    });
                    break;
                }
            }
            t *= 2;
        }
    }
    report
}

/// The weights `b_{t0..=m}` with `b_{t0} = Γ_{t0}/γ_{t0}` and
/// `b_t = Γ_t/γ_t - Γ_t/γ_{t-1}`, which solve
/// `Σ_{k=t0}^{t} (b_k/Γ_k) γ_t = 1` for every `t` in range.
pub fn lemma3_weights(d: &dyn Discount, t0: usize, m: usize) -> Result<Vec<f64>> {
    if t0 == 0 || m < t0 {
        return Err(Error::precondition(format!(
            "need 1 ≤ t0 ≤ m, got t0={t0}, m={m}"
        )));
    }
    let ln_g: Vec<f64> = (t0..=m).map(|t| d.ln_gamma(t)).collect();
    if let Some(i) = ln_g.iter().position(|&g| g == f64::NEG_INFINITY) {
        return Err(Error::ZeroDiscount { t: t0 + i });
    }
    let mut weights = Vec::with_capacity(m - t0 + 1);
    for (i, t) in (t0..=m).enumerate() {
        let ln_tail = d.ln_tail(t);
        let b = if i == 0 {
            (ln_tail - ln_g[0]).exp()
        } else {
            (ln_tail - ln_g[i]).exp() - (ln_tail - ln_g[i - 1]).exp()
        };
        weights.push(b);
    }
    Ok(weights)
}

/// `γ_t H_t(ε) / Γ_t`, which is at least `1 - ε` for monotone decreasing,
/// positive discounts.
pub fn tail_ratio_bound(d: &dyn Discount, t: usize, eps: f64) -> Result<f64> {
    let h = effective_horizon(d, t, eps)?;
    if h == 0 {
        return Ok(0.0);
    }
    Ok((d.ln_gamma(t) - d.ln_tail(t)).exp() * h as f64)
}

/// Discount weights over a planning window `[t0, m]`, relative to `Γ_{t0}`.
#[derive(Clone, Debug)]
pub struct Window {
    pub t0: usize,
    pub m: usize,
    /// `γ_t / Γ_{t0}` for `t` in `t0..=m`.
    pub reward: Vec<f64>,
    /// `Γ_t / Γ_{t0}` for `t` in `t0..=m+1`.
    pub normalizer: Vec<f64>,
}

impl Window {
    pub fn new(d: &dyn Discount, t0: usize, m: usize) -> Self {
        let base = d.ln_tail(t0);
        let rel = |x: f64| {
            if base == f64::NEG_INFINITY {
                0.0
            } else {
                (x - base).exp()
            }
        };
        let reward = (t0..=m).map(|t| rel(d.ln_gamma(t))).collect();
        let normalizer = (t0..=m + 1).map(|t| rel(d.ln_tail(t))).collect();
        Window {
            t0,
            m,
            reward,
            normalizer,
        }
    }

    /// Undiscounted weights: every reward counts 1, values are raw sums.
    pub fn undiscounted(t0: usize, m: usize) -> Self {
        Window {
            t0,
            m,
            reward: vec![1.0; (m + 1).saturating_sub(t0)],
            normalizer: vec![1.0; (m + 2).saturating_sub(t0)],
        }
    }

    pub fn reward_weight(&self, t: usize) -> f64 {
        self.reward[t - self.t0]
    }

    pub fn normalizer(&self, t: usize) -> f64 {
        self.normalizer[t - self.t0]
    }
}
