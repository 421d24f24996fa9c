use std::io::{BufRead, Write};
use std::sync::OnceLock;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::design::{BlockOrder, Condition, ExperimentKind, Feedback, SessionConfig, TrialSlot, TRIALS_PER_SESSION};
use crate::agents::{Agent, BidContext, Bidder, RulePrior};
use crate::auction::{
    best_response_with_utility, expected_utility, ratio_against, realize_outcome, AllocationRule, BidGrid, Cost,
    Outcome, PayoffMode, RiskParam,
};
use crate::dashboard::Variant;
use crate::inference::best_response::{BestResponseTable, RangeSide};
use crate::stimuli::StimulusSet;
use crate::{Error, Result, ENDOWED_COST, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    NegativeExpectedUtility,
}

/// One logged auction round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialRecord {
    pub schema_version: u32,
    pub participant_id: String,
    pub experiment: ExperimentKind,
    pub condition: Condition,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub block_order: Option<BlockOrder>,
    pub trialnum: u32,
    pub block_index: u32,
    pub trial_in_block: u32,
    pub feedback: Feedback,
    pub payoff_mode: PayoffMode,
    pub variant: Variant,
    pub rule_id: usize,
    pub mu: f64,
    pub sigma: f64,
    pub cost: f64,
    pub bid: f64,
    pub outcome: Outcome,
    pub expected_utility: f64,
    /// Risk-neutral best response on the fine grid.
    pub best_response: f64,
    pub bid_optimization_ratio: f64,
    pub negative_utility: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inferred_cost_br: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inferred_cost_out_of_range: Option<RangeSide>,
    pub excluded: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exclusion_reason: Option<ExclusionReason>,
    /// UTC, RFC 3339. Live sessions only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timestamp: Option<String>,
}

impl TrialRecord {
    pub fn rule(&self) -> Result<AllocationRule> {
        AllocationRule::new(self.mu, self.sigma)
    }

    /// Grouping label: the condition plus the within-subject factor
    /// (feedback in exp1, payoff mode in exp2).
    pub fn condition_label(&self) -> String {
        let within = match self.experiment {
            ExperimentKind::Exp1 => self.feedback.as_str(),
            ExperimentKind::Exp2 => match self.payoff_mode {
                PayoffMode::Deterministic => "deterministic",
                PayoffMode::Stochastic => "stochastic",
            },
        };
        format!("{}:{}:{}", self.experiment.as_str(), self.condition.as_str(), within)
    }
}

/// Stimuli plus everything derived from them that trials need: the prior,
/// grids, best responses, optimal utilities and (lazily) inversion tables.
#[derive(Debug)]
pub struct StimulusContext {
    stimuli: StimulusSet,
    cost: Cost,
    prior: RulePrior,
    fine: BidGrid,
    choice: BidGrid,
    best_responses: Vec<f64>,
    optima: Vec<f64>,
    inversion: Vec<OnceLock<BestResponseTable>>,
}

impl StimulusContext {
    pub fn new(stimuli: StimulusSet) -> Result<Self> {
        let cost = Cost::new(ENDOWED_COST)?;
        let fine = BidGrid::fine();
        let mut best_responses = Vec::with_capacity(stimuli.len());
        let mut optima = Vec::with_capacity(stimuli.len());
        for rule in &stimuli.rules {
            let (b, u) = best_response_with_utility(rule, cost, &fine, RiskParam::NEUTRAL)?;
            if !(u > 0.0) {
                return Err(Error::DegenerateStimulus(format!("rule {rule:?} has no profitable bid")));
            }
            best_responses.push(b);
            optima.push(u);
        }
        Ok(StimulusContext {
            prior: stimuli.prior()?,
            inversion: stimuli.rules.iter().map(|_| OnceLock::new()).collect(),
            stimuli,
            cost,
            fine,
            choice: BidGrid::coarse(),
            best_responses,
            optima,
        })
    }

    pub fn stimuli(&self) -> &StimulusSet {
        &self.stimuli
    }

    pub fn cost(&self) -> Cost {
        self.cost
    }

    pub fn prior(&self) -> &RulePrior {
        &self.prior
    }

    pub fn rule(&self, id: usize) -> Result<&AllocationRule> {
        self.stimuli.rule(id)
    }

    pub fn best_response(&self, id: usize) -> f64 {
        self.best_responses[id]
    }

    pub fn optimum(&self, id: usize) -> f64 {
        self.optima[id]
    }

    pub fn inversion_table(&self, id: usize) -> &BestResponseTable {
        self.inversion[id].get_or_init(|| BestResponseTable::fine(&self.stimuli.rules[id]))
    }

    pub fn bid_context(&self, rule_id: usize) -> Result<BidContext<'_>> {
        Ok(BidContext {
            rule: self.rule(rule_id)?,
            cost: self.cost,
            prior: &self.prior,
            fine_grid: &self.fine,
            choice_grid: &self.choice,
        })
    }

    /// Score and resolve one submitted bid.
    ///
    /// The outcome draw uses its own stream of the session seed, so a live
    /// session and a simulation with the same seed and bids log the same
    /// outcomes.
    pub fn resolve_trial(&self, config: &SessionConfig, slot: TrialSlot, bid: f64) -> Result<TrialRecord> {
        if !(bid.is_finite() && bid >= 0.0) {
            return Err(Error::Validation(format!("bid must be a finite number >= 0, got {bid}")));
        }
        let rule_id = config.rule_id(slot);
        let rule = self.rule(rule_id)?;
        let block = config.block(slot);
        let mut rng = trial_stream(config.seed, slot, Stream::Outcome);
        let outcome = realize_outcome(rule, self.cost, bid, block.payoff_mode, &mut rng);
        let utility = expected_utility(rule, self.cost, bid);
        let score = ratio_against(rule, self.cost, bid, self.optima[rule_id])?;
        let (inferred_cost_br, inferred_cost_out_of_range) = if block.feedback.shows_inferred_cost() {
            let inv = self.inversion_table(rule_id).invert(bid)?;
            (Some(inv.cost), inv.out_of_range)
        } else {
            (None, None)
        };
        let excluded = utility < 0.0;
        Ok(TrialRecord {
            schema_version: SCHEMA_VERSION,
            participant_id: config.participant_id.clone(),
            experiment: config.experiment,
            condition: config.condition,
            block_order: config.block_order,
            trialnum: slot.trialnum,
            block_index: slot.block_index,
            trial_in_block: slot.trial_in_block,
            feedback: block.feedback,
            payoff_mode: block.payoff_mode,
            variant: config.variant(slot),
            rule_id,
            mu: rule.mu(),
            sigma: rule.sigma(),
            cost: self.cost.value(),
            bid,
            outcome,
            expected_utility: utility,
            best_response: self.best_responses[rule_id],
            bid_optimization_ratio: score.ratio,
            negative_utility: score.negative_utility,
            inferred_cost_br,
            inferred_cost_out_of_range,
            excluded,
            exclusion_reason: excluded.then_some(ExclusionReason::NegativeExpectedUtility),
            timestamp: None,
        })
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Stream {
    Agent,
    Outcome,
}

/// Independent ChaCha stream per (session, trial, purpose); stream 0 is
/// reserved for participant-level draws.
pub(crate) fn trial_stream(seed: u64, slot: TrialSlot, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = match purpose {
        Stream::Agent => 0,
        Stream::Outcome => 1,
    };
    rng.set_stream(2 * u64::from(slot.trialnum) + offset);
    rng
}

/// Draw the participant's agent from the session's agent spec.
pub fn instantiate_agent(config: &SessionConfig) -> Result<Agent> {
    let spec = config
        .agent
        .as_ref()
        .ok_or_else(|| Error::config(format!("session {} has no agent", config.participant_id)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    spec.instantiate(&mut rng)
}

/// Play all trials of a session with `bidder`, appending to `log`.
///
/// On an agent failure the session stops; records of completed trials stay
/// in `log` and the error names the failing trial.
pub fn run_session(
    ctx: &StimulusContext,
    config: &SessionConfig,
    bidder: &dyn Bidder,
    log: &mut Vec<TrialRecord>,
) -> Result<()> {
    config.validate()?;
    for cursor in 0..TRIALS_PER_SESSION {
        let slot = TrialSlot::from_cursor(cursor);
        let bc = ctx.bid_context(config.rule_id(slot))?;
        let mut rng = trial_stream(config.seed, slot, Stream::Agent);
        let bid = bidder.bid(&bc, &mut rng).map_err(|e| {
            Error::Agent(format!("participant {} trial {}: {e}", config.participant_id, slot.trialnum))
        })?;
        log.push(ctx.resolve_trial(config, slot, bid)?);
    }
    Ok(())
}

/// Run every session with its configured agent; records come back in
/// session order regardless of scheduling.
pub fn simulate(ctx: &StimulusContext, sessions: &[SessionConfig]) -> Result<Vec<TrialRecord>> {
    let one = |config: &SessionConfig| -> Result<Vec<TrialRecord>> {
        let agent = instantiate_agent(config)?;
        let mut log = Vec::with_capacity(TRIALS_PER_SESSION);
        run_session(ctx, config, &agent, &mut log)?;
        Ok(log)
    };
    #[cfg(feature = "parallel")]
    let logs: Vec<Result<Vec<TrialRecord>>> = sessions.par_iter().map(one).collect();
    #[cfg(not(feature = "parallel"))]
    let logs: Vec<Result<Vec<TrialRecord>>> = sessions.iter().map(one).collect();
    let mut out = Vec::with_capacity(sessions.len() * TRIALS_PER_SESSION);
    for log in logs {
        out.extend(log?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[TrialRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TrialRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Validation(format!("line {}: {e}", i + 1)))?;
        if record.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "line {}: schema version {} (expected {SCHEMA_VERSION})",
                i + 1,
                record.schema_version
            )));
        }
        records.push(record);
    }
    Ok(records)
}
