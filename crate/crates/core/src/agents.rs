//! Synthetic bidders.
//!
//! Every model maps an allocation rule and a private cost to a bid:
//! exact best response, logit quantal response (optionally over CRRA
//! utility), fixed shading heuristics, and the prior-only baseline bidder
//! that ignores which rule is in force.

use std::sync::OnceLock;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::auction::{
    best_response, crra_expected_utility, expected_utility, AllocationRule, BidGrid, Cost, RiskParam,
};
use crate::numeric::ordered_sum;
use crate::{Error, Result};

/// Quantal response precision (per AC of utility).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantalParams {
    lambda: f64,
}

impl QuantalParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::domain(format!("quantal precision must be finite and >= 0, got {lambda}")));
        }
        Ok(QuantalParams { lambda })
    }

    pub fn lambda(self) -> f64 {
        self.lambda
    }
}

impl TryFrom<f64> for QuantalParams {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        QuantalParams::new(v)
    }
}

impl From<QuantalParams> for f64 {
    fn from(q: QuantalParams) -> f64 {
        q.lambda
    }
}

/// Logit choice probabilities `exp(λ u_i) / Σ exp(λ u_j)`.
///
/// Entries with `−∞` utility get probability exactly zero, also at `λ = 0`,
/// where the remaining bids are uniform.
pub fn quantal_probabilities(utilities: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if lambda == 0.0 && !utilities.iter().any(|u| u.is_nan()) {
        let k = utilities.iter().filter(|&&u| u > f64::NEG_INFINITY).count();
        if k == 0 {
            return Err(Error::domain("no bid with finite utility"));
        }
        let w = 1.0 / k as f64;
        return Ok(utilities.iter().map(|&u| if u > f64::NEG_INFINITY { w } else { 0.0 }).collect());
    }
    let mut p = quantal_log_probabilities(utilities, lambda)?;
    for v in &mut p {
        *v = v.exp();
    }
    Ok(p)
}

/// Natural log of [`quantal_probabilities`], computed with max-subtraction.
pub fn quantal_log_probabilities(utilities: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!("quantal precision must be finite and >= 0, got {lambda}")));
    }
    let z: Vec<f64> = utilities
        .iter()
        .map(|&u| if u == f64::NEG_INFINITY { u } else { lambda * u })
        .collect();
    if z.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("utilities must not be NaN"));
    }
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::domain("no bid with finite utility"));
    }
    let log_norm = z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    Ok(z.into_iter().map(|v| v - m - log_norm).collect())
}

/// Quantal response distribution over `grid` for one allocation rule.
pub fn quantal_choice_distribution(
    rule: &AllocationRule,
    cost: Cost,
    params: QuantalParams,
    risk: RiskParam,
    grid: &BidGrid,
) -> Result<Vec<f64>> {
    let utilities: Vec<f64> = grid.iter().map(|b| crra_expected_utility(rule, cost, b, risk)).collect();
    quantal_probabilities(&utilities, params.lambda)
}

/// Inverse-CDF draw from a probability vector; returns the index.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if acc > target {
                return i;
            }
        }
    }
    last_positive
}

/// One draw from [`quantal_choice_distribution`].
pub fn sample_quantal_bid<R: Rng + ?Sized>(
    rule: &AllocationRule,
    cost: Cost,
    params: QuantalParams,
    risk: RiskParam,
    grid: &BidGrid,
    rng: &mut R,
) -> Result<f64> {
    let p = quantal_choice_distribution(rule, cost, params, risk, grid)?;
    Ok(grid.bid(sample_index(&p, rng)))
}

/// Bid a fixed amount above cost, optionally moving with the gap to the
/// opponent mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShadingPolicy {
    Constant { offset: f64 },
    Linear { offset: f64, slope: f64 },
}

/// Bid prescribed by a shading policy, clamped to `grid`.
pub fn shaded_bid(cost: Cost, policy: ShadingPolicy, rule: &AllocationRule, grid: &BidGrid) -> f64 {
    let c = cost.value();
    let raw = match policy {
        ShadingPolicy::Constant { offset } => c + offset,
        ShadingPolicy::Linear { offset, slope } => c + offset + slope * (rule.mu() - c),
    };
    grid.clamp(raw)
}

/// A discrete prior over allocation rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulePrior {
    rules: Vec<AllocationRule>,
    weights: Vec<f64>,
}

impl RulePrior {
    pub fn new(entries: Vec<(AllocationRule, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::config("rule prior is empty"));
        }
        if entries.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("rule prior weights must be finite and nonnegative"));
        }
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("rule prior weights sum to {total}, expected 1")));
        }
        let (rules, weights) = entries.into_iter().unzip();
        Ok(RulePrior { rules, weights })
    }

    /// Equal weight on every rule.
    pub fn uniform(rules: &[AllocationRule]) -> Result<Self> {
        let n = rules.len() as f64;
        RulePrior::new(rules.iter().map(|r| (*r, 1.0 / n)).collect())
    }

    /// Weights proportional to integer counts, `count / total`.
    pub fn from_counts(rules: &[AllocationRule], counts: &[usize]) -> Result<Self> {
        if rules.len() != counts.len() {
            return Err(Error::config("rules and counts differ in length"));
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::config("rule prior is empty"));
        }
        RulePrior::new(
            rules
                .iter()
                .zip(counts)
                .filter(|(_, &k)| k > 0)
                .map(|(r, &k)| (*r, k as f64 / total as f64))
                .collect(),
        )
    }

    pub fn rules(&self) -> &[AllocationRule] {
        &self.rules
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Risk-neutral expected utility of every grid bid under one rule.
pub(crate) fn utility_table(rule: &AllocationRule, cost: Cost, grid: &BidGrid) -> Vec<f64> {
    grid.iter().map(|b| expected_utility(rule, cost, b)).collect()
}

/// `Σ_s w_s · table_s[i]` summed in canonical order.
#[inline]
pub(crate) fn mixture_value(weights: &[f64], tables: &[&[f64]], i: usize, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(weights.iter().zip(tables).map(|(w, t)| w * t[i]));
    ordered_sum(scratch)
}

/// Lowest grid index at or above cost maximizing the mixture utility.
pub(crate) fn mixture_argmax(weights: &[f64], tables: &[&[f64]], grid: &BidGrid, cost: Cost) -> (usize, f64) {
    let start = grid.first_at_or_above(cost.value()).min(grid.len() - 1);
    let mut scratch = Vec::with_capacity(weights.len());
    let mut best = (start, f64::NEG_INFINITY);
    for i in start..grid.len() {
        let v = mixture_value(weights, tables, i, &mut scratch);
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Bid that maximizes expected utility under the prior alone.
pub fn prior_baseline_bid(prior: &RulePrior, cost: Cost, grid: &BidGrid) -> Result<f64> {
    prior_baseline_with_utility(prior, cost, grid).map(|(b, _)| b)
}

/// [`prior_baseline_bid`] and its expected utility under the prior.
pub fn prior_baseline_with_utility(prior: &RulePrior, cost: Cost, grid: &BidGrid) -> Result<(f64, f64)> {
    if prior.is_empty() {
        return Err(Error::config("rule prior is empty"));
    }
    if !grid.contains(cost.value()) {
        return Err(Error::config(format!("bid grid does not cover cost {}", cost.value())));
    }
    let tables: Vec<Vec<f64>> = prior.rules().iter().map(|r| utility_table(r, cost, grid)).collect();
    let refs: Vec<&[f64]> = tables.iter().map(Vec::as_slice).collect();
    let (i, v) = mixture_argmax(prior.weights(), &refs, grid, cost);
    Ok((grid.bid(i), v))
}

/// Configuration-file form of a bidder model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    /// Risk-neutral best response on the fine grid.
    Rational,
    /// Logit quantal response on the coarse grid, with CRRA coefficient `r`.
    Quantal {
        lambda: f64,
        #[serde(default)]
        r: f64,
        /// Per-participant log-normal jitter of `lambda` (0 = shared).
        #[serde(default)]
        lambda_log_sd: f64,
    },
    /// Fixed shading; linear in the opponent-mean gap when `slope` is set.
    Shading {
        offset: f64,
        #[serde(default)]
        slope: Option<f64>,
    },
    /// Optimizes against the prior over rules, ignoring the dashboard.
    PriorBaseline,
}

impl AgentSpec {
    pub fn validate(&self) -> Result<()> {
        if let AgentSpec::Quantal { lambda, r, lambda_log_sd } = *self {
            QuantalParams::new(lambda)?;
            RiskParam::new(r)?;
            if !(lambda_log_sd.is_finite() && lambda_log_sd >= 0.0) {
                return Err(Error::config("lambda_log_sd must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Build one participant's agent; heterogeneity is drawn from `rng`.
    pub fn instantiate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Agent> {
        self.validate()?;
        Ok(match *self {
            AgentSpec::Rational => Agent::Rational,
            AgentSpec::Quantal { lambda, r, lambda_log_sd } => {
                let lambda = if lambda_log_sd > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    lambda * (lambda_log_sd * z).exp()
                } else {
                    lambda
                };
                Agent::Quantal { params: QuantalParams::new(lambda)?, risk: RiskParam::new(r)? }
            }
            AgentSpec::Shading { offset, slope } => Agent::Shading(match slope {
                None => ShadingPolicy::Constant { offset },
                Some(slope) => ShadingPolicy::Linear { offset, slope },
            }),
            AgentSpec::PriorBaseline => Agent::PriorBaseline(OnceLock::new()),
        })
    }
}

/// Everything a bidder may condition on in one trial.
#[derive(Debug, Clone, Copy)]
pub struct BidContext<'a> {
    pub rule: &'a AllocationRule,
    pub cost: Cost,
    /// Prior over the rules of the experiment.
    pub prior: &'a RulePrior,
    pub fine_grid: &'a BidGrid,
    pub choice_grid: &'a BidGrid,
}

pub trait Bidder {
    fn bid(&self, ctx: &BidContext<'_>, rng: &mut dyn RngCore) -> Result<f64>;
}

impl<F> Bidder for F
where
    F: Fn(&BidContext<'_>) -> Result<f64>,
{
    fn bid(&self, ctx: &BidContext<'_>, _rng: &mut dyn RngCore) -> Result<f64> {
        self(ctx)
    }
}

/// A concrete participant model.
#[derive(Debug)]
pub enum Agent {
    Rational,
    Quantal { params: QuantalParams, risk: RiskParam },
    Shading(ShadingPolicy),
    /// Caches the single prior-optimal bid.
    PriorBaseline(OnceLock<f64>),
}

impl Bidder for Agent {
    fn bid(&self, ctx: &BidContext<'_>, rng: &mut dyn RngCore) -> Result<f64> {
        match self {
            Agent::Rational => best_response(ctx.rule, ctx.cost, ctx.fine_grid, RiskParam::NEUTRAL),
            Agent::Quantal { params, risk } => {
                sample_quantal_bid(ctx.rule, ctx.cost, *params, *risk, ctx.choice_grid, rng)
            }
            Agent::Shading(policy) => Ok(shaded_bid(ctx.cost, *policy, ctx.rule, ctx.fine_grid)),
            Agent::PriorBaseline(cache) => {
                if let Some(b) = cache.get() {
                    return Ok(*b);
                }
                let b = prior_baseline_bid(ctx.prior, ctx.cost, ctx.fine_grid)?;
                Ok(*cache.get_or_init(|| b))
            }
        }
    }
}

/// Quantal precision calibration against population-level targets.
pub mod calibration {
    use super::*;
    use crate::auction::best_response_with_utility;

    /// Expected bid optimization ratio of a quantal bidder, averaged over rules.
    pub fn expected_ratio(
        rules: &[AllocationRule],
        cost: Cost,
        lambda: f64,
        risk: RiskParam,
        choice_grid: &BidGrid,
        fine_grid: &BidGrid,
    ) -> Result<f64> {
        let params = QuantalParams::new(lambda)?;
        let mut total = 0.0;
        for rule in rules {
            let (_, opt) = best_response_with_utility(rule, cost, fine_grid, RiskParam::NEUTRAL)?;
            let p = quantal_choice_distribution(rule, cost, params, risk, choice_grid)?;
            total += choice_grid
                .iter()
                .zip(&p)
                .map(|(b, &pb)| pb * (expected_utility(rule, cost, b) / opt).clamp(0.0, 1.0))
                .sum::<f64>();
        }
        Ok(total / rules.len() as f64)
    }

    /// Expected share of bids strictly below cost.
    pub fn expected_below_cost_rate(
        rules: &[AllocationRule],
        cost: Cost,
        lambda: f64,
        risk: RiskParam,
        choice_grid: &BidGrid,
    ) -> Result<f64> {
        let params = QuantalParams::new(lambda)?;
        let mut total = 0.0;
        for rule in rules {
            let p = quantal_choice_distribution(rule, cost, params, risk, choice_grid)?;
            total += choice_grid
                .iter()
                .zip(&p)
                .filter(|(b, _)| *b < cost.value())
                .map(|(_, &pb)| pb)
                .sum::<f64>();
        }
        Ok(total / rules.len() as f64)
    }

    /// Bisection in `log λ` on `[lo, hi]` for `metric(λ) = target`.
    ///
    /// `increasing` states the direction of the metric in `λ`. Errors when the
    /// target is not bracketed.
    pub fn solve_lambda(
        target: f64,
        lo: f64,
        hi: f64,
        increasing: bool,
        mut metric: impl FnMut(f64) -> Result<f64>,
    ) -> Result<f64> {
        let sign = if increasing { 1.0 } else { -1.0 };
        let f_lo = sign * (metric(lo)? - target);
        let f_hi = sign * (metric(hi)? - target);
        if f_lo > 0.0 || f_hi < 0.0 {
            return Err(Error::config(format!(
                "calibration target {target} not bracketed by lambda in [{lo}, {hi}]"
            )));
        }
        let (mut a, mut b) = (lo.ln(), hi.ln());
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if sign * (metric(mid.exp())? - target) < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
            if b - a < 1e-10 {
                break;
            }
        }
        Ok((0.5 * (a + b)).exp())
    }
}
