//! Quantal-response cost estimation.
//!
//! Each participant contributes bids on several allocation rules. Under the
//! logit quantal response model a bid `b` on rule `s` has probability
//! `exp(λ π_s(b; c)) / Σ_α exp(λ π_s(α; c))` over the choice grid, where `π`
//! is the (CRRA) expected utility. The pair `(c, λ)` is fitted per
//! participant by bounded quasi-Newton search in `(c, ln λ)` from a fixed
//! lattice of starts; the CRRA coefficient is shared by the population and
//! found by an outer golden-section search.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimize::{golden_section_max, minimize_box, MinimizeOptions};
use super::{Flag, InferenceResult, ModelKind};
use crate::agents::quantal_log_probabilities;
use crate::auction::{AllocationRule, BidGrid, Cost, RiskParam};
use crate::{Error, Result};

/// Choice grid plus win probabilities of every rule on it.
#[derive(Debug, Clone)]
pub struct ChoiceModel {
    grid: BidGrid,
    rules: Vec<AllocationRule>,
    win: Vec<Vec<f64>>,
}

impl ChoiceModel {
    pub fn new(rules: &[AllocationRule], grid: BidGrid) -> Self {
        ChoiceModel {
            grid,
            rules: rules.to_vec(),
            win: rules.iter().map(|r| r.win_table(&grid)).collect(),
        }
    }

    pub fn grid(&self) -> &BidGrid {
        &self.grid
    }

    pub fn rules(&self) -> &[AllocationRule] {
        &self.rules
    }
}

#[derive(Debug, Clone)]
struct Group {
    rule: usize,
    /// Grid indices of the observed bids.
    bids: Vec<usize>,
}

/// One participant's bids, snapped to the choice grid and grouped by rule.
#[derive(Debug, Clone)]
pub struct ParticipantData {
    pub participant_id: String,
    groups: Vec<Group>,
    n_obs: usize,
    /// Largest distance between an observed bid and its grid bid.
    pub max_snap: f64,
    min_bid: f64,
}

impl ParticipantData {
    pub fn new(model: &ChoiceModel, participant_id: impl Into<String>, observations: &[(usize, f64)]) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::domain("no observations"));
        }
        let mut groups: Vec<Group> = Vec::new();
        let mut max_snap: f64 = 0.0;
        let mut min_bid = f64::INFINITY;
        for &(rule, bid) in observations {
            if rule >= model.rules.len() {
                return Err(Error::domain(format!("observation references unknown rule {rule}")));
            }
            if !bid.is_finite() {
                return Err(Error::domain(format!("bid must be finite, got {bid}")));
            }
            let idx = model.grid.nearest_index(bid);
            let snapped = model.grid.bid(idx);
            max_snap = max_snap.max((snapped - bid).abs());
            min_bid = min_bid.min(snapped);
            match groups.iter_mut().find(|g| g.rule == rule) {
                Some(g) => g.bids.push(idx),
                None => groups.push(Group { rule, bids: vec![idx] }),
            }
        }
        groups.sort_by_key(|g| g.rule);
        Ok(ParticipantData {
            participant_id: participant_id.into(),
            groups,
            n_obs: observations.len(),
            max_snap,
            min_bid,
        })
    }

    pub fn len(&self) -> usize {
        self.n_obs
    }

    pub fn is_empty(&self) -> bool {
        self.n_obs == 0
    }

    /// Lowest snapped bid.
    pub fn min_bid(&self) -> f64 {
        self.min_bid
    }
}

/// Log-likelihood and its partial derivatives in `c` and `λ`.
#[derive(Debug, Clone, Copy)]
struct LikelihoodPoint {
    value: f64,
    d_cost: f64,
    d_lambda: f64,
}

/// Smallest margin used for the derivative of `m^(1−r)` at `m = 0`.
const MIN_MARGIN: f64 = 1e-9;

fn likelihood(model: &ChoiceModel, data: &ParticipantData, cost: f64, lambda: f64, r: f64) -> LikelihoodPoint {
    let grid = &model.grid;
    let n = grid.len();
    let k = 1.0 - r;
    // Margin terms shared by all rules: u_i = a_i p_i and du_i/dc = da_i p_i.
    // Under CRRA, grid bids below cost are impossible and skipped entirely.
    let mut first = 0;
    let mut a = vec![0.0; n];
    let mut da = vec![0.0; n];
    for i in 0..n {
        let m = grid.bid(i) - cost;
        if r == 0.0 {
            a[i] = m;
            da[i] = -1.0;
        } else if m < 0.0 {
            first = i + 1;
        } else {
            let mm = m.max(MIN_MARGIN);
            let pow = mm.powf(k);
            a[i] = if m == 0.0 { 0.0 } else { pow / k };
            da[i] = -(pow / mm);
        }
    }
    let mut total = LikelihoodPoint { value: 0.0, d_cost: 0.0, d_lambda: 0.0 };
    if data.groups.iter().any(|g| g.bids.iter().any(|&b| b < first)) {
        return LikelihoodPoint { value: f64::NEG_INFINITY, d_cost: 0.0, d_lambda: 0.0 };
    }
    for g in &data.groups {
        let win = &model.win[g.rule];
        let zmax = (first..n).map(|i| lambda * a[i] * win[i]).fold(f64::NEG_INFINITY, f64::max);
        let (mut sum, mut eu, mut edu) = (0.0, 0.0, 0.0);
        for i in first..n {
            let ei = (lambda * a[i] * win[i] - zmax).exp();
            sum += ei;
            eu += ei * a[i] * win[i];
            edu += ei * da[i] * win[i];
        }
        let lse = zmax + sum.ln();
        let count = g.bids.len() as f64;
        for &b in &g.bids {
            let u = a[b] * win[b];
            total.value += lambda * u;
            total.d_lambda += u;
            total.d_cost += lambda * da[b] * win[b];
        }
        total.value -= count * lse;
        total.d_lambda -= count * eu / sum;
        total.d_cost -= count * lambda * edu / sum;
    }
    total
}

/// Quantal-response log-likelihood of one participant's bids.
///
/// Bids are snapped to the nearest choice-grid bid. Returns `−∞` when an
/// observed bid has zero probability (below cost under CRRA utility).
pub fn qr_log_likelihood(
    model: &ChoiceModel,
    data: &ParticipantData,
    cost: Cost,
    lambda: f64,
    risk: RiskParam,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("no observations"));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!("quantal precision must be finite and >= 0, got {lambda}")));
    }
    Ok(likelihood(model, data, cost.value(), lambda, risk.value()).value)
}

/// Reference log-likelihood through the public choice distribution; used to
/// cross-check the fused evaluator.
#[cfg(test)]
fn qr_log_likelihood_reference(
    model: &ChoiceModel,
    data: &ParticipantData,
    cost: Cost,
    lambda: f64,
    risk: RiskParam,
) -> Result<f64> {
    let mut total = 0.0;
    for g in &data.groups {
        let rule = &model.rules[g.rule];
        let utilities: Vec<f64> = model
            .grid
            .iter()
            .map(|b| crate::auction::crra_expected_utility(rule, cost, b, risk))
            .collect();
        let logp = quantal_log_probabilities(&utilities, lambda)?;
        total += g.bids.iter().map(|&b| logp[b]).sum::<f64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    pub cost_lo: f64,
    pub cost_hi: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

impl Default for FitBounds {
    fn default() -> Self {
        FitBounds { cost_lo: 0.0, cost_hi: 200.0, lambda_lo: 1e-4, lambda_hi: 100.0 }
    }
}

impl FitBounds {
    fn validate(&self) -> Result<()> {
        if !(self.cost_lo < self.cost_hi && self.lambda_lo > 0.0 && self.lambda_lo < self.lambda_hi) {
            return Err(Error::config(format!("invalid fit bounds {self:?}")));
        }
        Ok(())
    }
}

/// Objective maximized/minimized by [`fit_qr`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitObjective {
    /// Maximum likelihood.
    #[default]
    Likelihood,
    /// Squared error between observed bid frequencies and model
    /// probabilities, per rule.
    ProbabilitySquaredError,
}

fn squared_probability_error(model: &ChoiceModel, data: &ParticipantData, cost: f64, lambda: f64, r: f64) -> f64 {
    let grid = &model.grid;
    let mut err = 0.0;
    let mut util = vec![0.0; grid.len()];
    for g in &data.groups {
        let rule = &model.rules[g.rule];
        for (i, u) in util.iter_mut().enumerate() {
            *u = crate::auction::crra_utility_from_prob(grid.bid(i) - cost, model.win[g.rule][i], r);
        }
        let _ = rule;
        let Ok(logp) = quantal_log_probabilities(&util, lambda) else {
            return f64::INFINITY;
        };
        let mut freq = vec![0.0; grid.len()];
        let w = 1.0 / g.bids.len() as f64;
        for &b in &g.bids {
            freq[b] += w;
        }
        err += logp.iter().zip(&freq).map(|(lp, f)| (lp.exp() - f).powi(2)).sum::<f64>();
    }
    err
}

/// Objective value and gradient in `(c, ln λ)`, to be minimized.
fn objective(
    model: &ChoiceModel,
    data: &ParticipantData,
    r: f64,
    kind: FitObjective,
    x: &[f64],
) -> (f64, Vec<f64>) {
    let (c, theta) = (x[0], x[1]);
    let lambda = theta.exp();
    match kind {
        FitObjective::Likelihood => {
            let p = likelihood(model, data, c, lambda, r);
            if !p.value.is_finite() {
                return (f64::INFINITY, vec![0.0, 0.0]);
            }
            (-p.value, vec![-p.d_cost, -lambda * p.d_lambda])
        }
        FitObjective::ProbabilitySquaredError => {
            let f = |c: f64, t: f64| squared_probability_error(model, data, c, t.exp(), r);
            let v = f(c, theta);
            let (hc, ht) = (1e-4, 1e-5);
            let gc = (f(c + hc, theta) - f(c - hc, theta)) / (2.0 * hc);
            let gt = (f(c, theta + ht) - f(c, theta - ht)) / (2.0 * ht);
            (v, vec![gc, gt])
        }
    }
}

const START_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

/// Estimate `(c, λ)` for one participant at a fixed CRRA coefficient.
///
/// Under CRRA utility the cost is additionally capped at the lowest observed
/// bid, above which the likelihood is zero.
pub fn fit_qr(
    model: &ChoiceModel,
    data: &ParticipantData,
    risk: RiskParam,
    bounds: &FitBounds,
    kind: FitObjective,
) -> Result<InferenceResult> {
    fit_qr_inner(model, data, risk, bounds, kind, true)
}

/// `scan` controls the low-information check, which costs about as much as
/// a fit and is skipped inside the outer search over `r`.
fn fit_qr_inner(
    model: &ChoiceModel,
    data: &ParticipantData,
    risk: RiskParam,
    bounds: &FitBounds,
    kind: FitObjective,
    scan: bool,
) -> Result<InferenceResult> {
    bounds.validate()?;
    if data.is_empty() {
        return Err(Error::domain("no observations"));
    }
    let r = risk.value();
    let cost_hi = if r > 0.0 { bounds.cost_hi.min(data.min_bid) } else { bounds.cost_hi };
    let cost_lo = bounds.cost_lo.min(cost_hi);
    let (t_lo, t_hi) = (bounds.lambda_lo.ln(), bounds.lambda_hi.ln());
    let lo = [cost_lo, t_lo];
    let hi = [cost_hi, t_hi];

    let mut best: Option<super::optimize::Minimum> = None;
    let mut failures = Vec::new();
    for qc in START_QUANTILES {
        for qt in START_QUANTILES {
            let x0 = [cost_lo + qc * (cost_hi - cost_lo), t_lo + qt * (t_hi - t_lo)];
            match minimize_box(|x| objective(model, data, r, kind, x), &x0, &lo, &hi, MinimizeOptions::default()) {
                Some(m) if m.value.is_finite() => {
                    if best.as_ref().is_none_or(|b| m.value < b.value) {
                        best = Some(m);
                    }
                }
                _ => failures.push(format!("start ({:.2}, {:.3})", x0[0], x0[1].exp())),
            }
        }
    }
    let Some(best) = best else {
        return Err(Error::Estimation(format!(
            "participant {}: no start produced a finite objective ({})",
            data.participant_id,
            failures.join(", ")
        )));
    };

    let (c_hat, lambda_hat) = (best.x[0], best.x[1].exp());
    let log_likelihood = likelihood(model, data, c_hat, lambda_hat, r).value;
    let mut flags = Vec::new();
    if !best.converged {
        flags.push(Flag::NotConverged);
    }
    if best.x[1] >= t_hi - 1e-9 {
        flags.push(Flag::LambdaAtUpperBound);
    }
    if best.x[1] <= t_lo + 1e-9 {
        flags.push(Flag::LambdaAtLowerBound);
    }
    if c_hat <= cost_lo + 1e-9 || c_hat >= cost_hi - 1e-9 {
        flags.push(Flag::CostAtBound);
    }
    if scan && likelihood_spread_in_cost(model, data, lambda_hat, r, cost_lo, cost_hi) < LOW_INFORMATION_SPREAD {
        flags.push(Flag::LowInformation);
    }
    Ok(InferenceResult {
        participant_id: data.participant_id.clone(),
        trialnum: None,
        model: if r > 0.0 { ModelKind::QrCrra } else { ModelKind::Qr },
        inferred_cost: c_hat,
        lambda_hat: Some(lambda_hat),
        r_hat: (r > 0.0).then_some(r),
        log_likelihood: Some(log_likelihood),
        snap_distance: Some(data.max_snap),
        flags,
    })
}

/// Half the 95% χ²₁ quantile: a likelihood range in `c` below this cannot
/// separate any two costs.
const LOW_INFORMATION_SPREAD: f64 = 1.92;

fn likelihood_spread_in_cost(model: &ChoiceModel, data: &ParticipantData, lambda: f64, r: f64, lo: f64, hi: f64) -> f64 {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for i in 0..=40 {
        let c = lo + (hi - lo) * i as f64 / 40.0;
        let v = likelihood(model, data, c, lambda, r).value;
        if v.is_finite() {
            min = min.min(v);
            max = max.max(v);
        }
    }
    if max.is_finite() {
        max - min
    } else {
        0.0
    }
}

/// Fit every participant at a fixed CRRA coefficient.
pub fn fit_population_at(
    model: &ChoiceModel,
    participants: &[ParticipantData],
    risk: RiskParam,
    bounds: &FitBounds,
    kind: FitObjective,
) -> Result<Vec<InferenceResult>> {
    fit_population_inner(model, participants, risk, bounds, kind, true)
}

fn fit_population_inner(
    model: &ChoiceModel,
    participants: &[ParticipantData],
    risk: RiskParam,
    bounds: &FitBounds,
    kind: FitObjective,
    scan: bool,
) -> Result<Vec<InferenceResult>> {
    #[cfg(feature = "parallel")]
    let it = participants.par_iter();
    #[cfg(not(feature = "parallel"))]
    let it = participants.iter();
    it.map(|p| fit_qr_inner(model, p, risk, bounds, kind, scan)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationFit {
    pub r_hat: f64,
    /// Summed log-likelihood at `r_hat`.
    pub log_likelihood: f64,
    pub results: Vec<InferenceResult>,
    /// `(r, summed log-likelihood)` for every outer evaluation.
    pub trace: Vec<(f64, f64)>,
}

/// Range searched for the shared CRRA coefficient.
pub const R_SEARCH: (f64, f64) = (0.0, 0.95);
pub const R_TOLERANCE: f64 = 1e-3;

/// Shared-`r` quantal response fit: golden-section search over `r`, with
/// independent `(c, λ)` fits per participant inside. The interval endpoints
/// are evaluated as well so a boundary optimum is reported exactly.
pub fn fit_qr_crra_population(
    model: &ChoiceModel,
    participants: &[ParticipantData],
    bounds: &FitBounds,
) -> Result<PopulationFit> {
    if participants.is_empty() {
        return Err(Error::domain("no participants"));
    }
    let total = |r: f64| -> Result<(f64, Vec<InferenceResult>)> {
        let res =
            fit_population_inner(model, participants, RiskParam::new(r)?, bounds, FitObjective::Likelihood, false)?;
        let ll = res.iter().map(|x| x.log_likelihood.unwrap_or(f64::NEG_INFINITY)).sum();
        Ok((ll, res))
    };
    let mut error = None;
    let (r_mid, _, mut trace) = golden_section_max(
        |r| match total(r) {
            Ok((ll, _)) => ll,
            Err(e) => {
                error.get_or_insert(e);
                f64::NEG_INFINITY
            }
        },
        R_SEARCH.0,
        R_SEARCH.1,
        R_TOLERANCE,
    );
    if let Some(e) = error {
        return Err(e);
    }
    let mut best: Option<(f64, f64, Vec<InferenceResult>)> = None;
    for r in [R_SEARCH.0, r_mid, R_SEARCH.1] {
        let (ll, res) = total(r)?;
        if r != r_mid {
            trace.push((r, ll));
        }
        if best.as_ref().is_none_or(|b| ll > b.1) {
            best = Some((r, ll, res));
        }
    }
    let (r_hat, log_likelihood, _) = best.expect("three candidates evaluated");
    let mut results = fit_population_at(model, participants, RiskParam::new(r_hat)?, bounds, FitObjective::Likelihood)?;
    for res in &mut results {
        res.model = ModelKind::QrCrra;
        res.r_hat = Some(r_hat);
    }
    Ok(PopulationFit { r_hat, log_likelihood, results, trace })
}
