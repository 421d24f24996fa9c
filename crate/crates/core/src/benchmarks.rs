//! Rational-agent reference scores: baseline (prior only), benchmark (full
//! state) and calibrated (the information carried by observed bids).
//!
//! All three evaluate expected utilities on a shared bid grid through the same
//! mixture routine, so the degenerate cases (one bin per state, a single bin)
//! reproduce the benchmark and baseline values exactly.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agents::{mixture_argmax, utility_table, RulePrior};
use crate::auction::{expected_utility, AllocationRule, BidGrid, Cost};
use crate::experiment::TrialRecord;
use crate::numeric::ordered_sum;
use crate::{Error, Result};

/// Default signal-bin width for [`calibrated_score`], in AC.
pub const DEFAULT_BIN_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StateAction {
    pub participant_id: String,
    pub state_id: usize,
    pub bid: f64,
}

/// Observed bids tagged with the state (rule) they were made in.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionDataset {
    rules: Vec<AllocationRule>,
    cost: Cost,
    entries: Vec<StateAction>,
}

impl StateActionDataset {
    pub fn new(rules: Vec<AllocationRule>, cost: Cost, entries: Vec<StateAction>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::domain("state-action dataset is empty"));
        }
        for e in &entries {
            if e.state_id >= rules.len() {
                return Err(Error::domain(format!("unknown state {}", e.state_id)));
            }
            if !e.bid.is_finite() {
                return Err(Error::domain(format!("bid must be finite, got {}", e.bid)));
            }
        }
        Ok(StateActionDataset { rules, cost, entries })
    }

    pub fn from_records(rules: Vec<AllocationRule>, records: &[TrialRecord]) -> Result<Self> {
        let cost = Cost::new(records.first().map_or(0.0, |r| r.cost))?;
        let entries = records
            .iter()
            .map(|r| StateAction { participant_id: r.participant_id.clone(), state_id: r.rule_id, bid: r.bid })
            .collect();
        StateActionDataset::new(rules, cost, entries)
    }

    pub fn rules(&self) -> &[AllocationRule] {
        &self.rules
    }

    pub fn cost(&self) -> Cost {
        self.cost
    }

    pub fn entries(&self) -> &[StateAction] {
        &self.entries
    }

    /// Empirical state frequencies.
    pub fn prior(&self) -> Result<RulePrior> {
        RulePrior::from_counts(&self.rules, &self.state_counts())
    }

    fn state_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.rules.len()];
        for e in &self.entries {
            counts[e.state_id] += 1;
        }
        counts
    }
}

fn check(prior: &RulePrior, cost: Cost, grid: &BidGrid) -> Result<()> {
    if prior.is_empty() {
        return Err(Error::config("rule prior is empty"));
    }
    if !grid.contains(cost.value()) {
        return Err(Error::config(format!("bid grid does not cover cost {}", cost.value())));
    }
    Ok(())
}

fn tables(rules: &[AllocationRule], cost: Cost, grid: &BidGrid) -> Vec<Vec<f64>> {
    rules.iter().map(|r| utility_table(r, cost, grid)).collect()
}

/// Optimal utility of each state, evaluated through the mixture routine.
fn state_optima(tables: &[Vec<f64>], grid: &BidGrid, cost: Cost) -> Vec<f64> {
    tables.iter().map(|t| mixture_argmax(&[1.0], &[t.as_slice()], grid, cost).1).collect()
}

/// Expected utility of an agent that sees the state and best responds.
pub fn benchmark_score(prior: &RulePrior, cost: Cost, grid: &BidGrid) -> Result<f64> {
    check(prior, cost, grid)?;
    let optima = state_optima(&tables(prior.rules(), cost, grid), grid, cost);
    let mut terms: Vec<f64> = prior.weights().iter().zip(&optima).map(|(w, v)| w * v).collect();
    Ok(ordered_sum(&mut terms))
}

/// Expected utility of the single bid that is optimal under the prior.
pub fn baseline_score(prior: &RulePrior, cost: Cost, grid: &BidGrid) -> Result<f64> {
    check(prior, cost, grid)?;
    let t = tables(prior.rules(), cost, grid);
    let refs: Vec<&[f64]> = t.iter().map(Vec::as_slice).collect();
    Ok(mixture_argmax(prior.weights(), &refs, grid, cost).1)
}

/// Bin index of a bid; bins are `[k·w, (k+1)·w)`.
fn bin_of(bid: f64, width: f64) -> i64 {
    (bid / width).floor() as i64
}

/// Expected utility of a rational agent that holds, for each observed bid
/// bin, the empirical posterior over states given that bin and best
/// responds to it.
pub fn calibrated_score(data: &StateActionDataset, grid: &BidGrid, bin_width: f64) -> Result<f64> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::config(format!("bin width must be positive, got {bin_width}")));
    }
    let cost = data.cost;
    if !grid.contains(cost.value()) {
        return Err(Error::config(format!("bid grid does not cover cost {}", cost.value())));
    }
    let n_states = data.rules.len();
    let mut bins: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for e in &data.entries {
        bins.entry(bin_of(e.bid, bin_width)).or_insert_with(|| vec![0; n_states])[e.state_id] += 1;
    }
    if bins.is_empty() {
        return Err(Error::domain("no observations to bin"));
    }
    let t = tables(&data.rules, cost, grid);
    let optima = state_optima(&t, grid, cost);
    let n = data.entries.len() as f64;
    // Fully revealing bins are pooled per state so that perfectly indexed
    // bids reproduce the benchmark sum term for term.
    let mut revealed = vec![0usize; n_states];
    let mut terms = Vec::with_capacity(bins.len());
    for counts in bins.values() {
        let present: Vec<usize> = (0..n_states).filter(|&s| counts[s] > 0).collect();
        if let [s] = present[..] {
            revealed[s] += counts[s];
            continue;
        }
        let total: usize = counts.iter().sum();
        let weights: Vec<f64> = present.iter().map(|&s| counts[s] as f64 / total as f64).collect();
        let refs: Vec<&[f64]> = present.iter().map(|&s| t[s].as_slice()).collect();
        terms.push(total as f64 / n * mixture_argmax(&weights, &refs, grid, cost).1);
    }
    for (s, &k) in revealed.iter().enumerate() {
        if k > 0 {
            terms.push(k as f64 / n * optima[s]);
        }
    }
    let score = ordered_sum(&mut terms);
    // The score lies between the baseline and the benchmark of the empirical
    // prior; summation order can still put it an ulp or two outside.
    let prior = data.prior()?;
    let lo = baseline_score(&prior, cost, grid)?;
    let hi = benchmark_score(&prior, cost, grid)?;
    Ok(score.max(lo).min(hi.max(lo)))
}

/// `(raw − baseline) / (benchmark − baseline)`.
pub fn normalize_score(raw: f64, baseline: f64, benchmark: f64) -> Result<f64> {
    if !(benchmark > baseline) {
        return Err(Error::DegenerateStimulus(format!(
            "benchmark {benchmark} does not exceed baseline {baseline}"
        )));
    }
    Ok((raw - baseline) / (benchmark - baseline))
}

/// Mean expected utility of the submitted bids under their true rules.
pub fn behavioral_score(records: &[TrialRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::domain("no trial records"));
    }
    let total: f64 = records
        .iter()
        .map(|r| Ok(expected_utility(&r.rule()?, Cost::new(r.cost)?, r.bid)))
        .sum::<Result<f64>>()?;
    Ok(total / records.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Baseline,
    Benchmark,
    Calibrated,
    Behavioral,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Baseline => "baseline",
            AgentKind::Benchmark => "benchmark",
            AgentKind::Calibrated => "calibrated",
            AgentKind::Behavioral => "behavioral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentScore {
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScoreRow {
    pub condition: String,
    pub agent: AgentKind,
    #[serde(flatten)]
    pub score: AgentScore,
    pub bin_width: f64,
}

/// Scores of the four agent kinds for each condition label, with the
/// baseline and benchmark computed from the condition's own state mix.
pub fn score_table(
    rules: &[AllocationRule],
    records: &[TrialRecord],
    grid: &BidGrid,
    bin_width: f64,
) -> Result<Vec<ScoreRow>> {
    let mut groups: BTreeMap<String, Vec<TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.condition_label()).or_default().push(r.clone());
    }
    if groups.is_empty() {
        return Err(Error::domain("no trial records"));
    }
    let mut rows = Vec::new();
    for (label, recs) in groups {
        let data = StateActionDataset::from_records(rules.to_vec(), &recs)?;
        let prior = data.prior()?;
        let base = baseline_score(&prior, data.cost, grid)?;
        let bench = benchmark_score(&prior, data.cost, grid)?;
        let cal = calibrated_score(&data, grid, bin_width)?;
        let beh = behavioral_score(&recs)?;
        for (agent, raw) in [
            (AgentKind::Baseline, base),
            (AgentKind::Benchmark, bench),
            (AgentKind::Calibrated, cal),
            (AgentKind::Behavioral, beh),
        ] {
            let normalized = normalize_score(raw, base, bench)?;
            rows.push(ScoreRow { condition: label.clone(), agent, score: AgentScore { raw, normalized }, bin_width });
        }
    }
    Ok(rows)
}

pub fn write_score_csv<W: Write>(out: W, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["condition", "agent", "raw", "normalized", "bin_width"])?;
    for r in rows {
        w.write_record([
            r.condition.clone(),
            r.agent.as_str().to_string(),
            r.score.raw.to_string(),
            r.score.normalized.to_string(),
            r.bin_width.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
