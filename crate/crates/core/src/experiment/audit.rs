use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::design::{TRIALS_PER_BLOCK, TRIALS_PER_SESSION};
use super::run::{StimulusContext, TrialRecord};
use crate::auction::{expected_utility, PayoffMode};
use crate::{Result, SCHEMA_VERSION};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditReport {
    pub participants: usize,
    pub trials: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check a trial log against the block structure, the stimuli and the
/// exclusion and payoff rules.
///
/// With `require_complete` every participant must have all 20 trials;
/// otherwise partial sessions pass as long as they are a gapless prefix.
pub fn audit_records(ctx: &StimulusContext, records: &[TrialRecord], require_complete: bool) -> Result<AuditReport> {
    let mut report = AuditReport { trials: records.len(), ..Default::default() };
    let mut by_participant: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        by_participant.entry(r.participant_id.as_str()).or_default().push(r);
    }
    report.participants = by_participant.len();
    let v = &mut report.violations;
    for (pid, recs) in by_participant {
        if require_complete && recs.len() != TRIALS_PER_SESSION {
            v.push(format!("{pid}: {} trials, expected {TRIALS_PER_SESSION}", recs.len()));
        }
        let mut nums: Vec<u32> = recs.iter().map(|r| r.trialnum).collect();
        nums.sort_unstable();
        if nums != (1..=recs.len() as u32).collect::<Vec<_>>() {
            v.push(format!("{pid}: trial numbers are not 1..={} without repeats", recs.len()));
        }
        for block in 1..=2u32 {
            let mut ids: Vec<usize> = recs.iter().filter(|r| r.block_index == block).map(|r| r.rule_id).collect();
            let complete = ids.len() == TRIALS_PER_BLOCK;
            ids.sort_unstable();
            ids.dedup();
            if ids.len() != recs.iter().filter(|r| r.block_index == block).count() {
                v.push(format!("{pid}: block {block} repeats a stimulus"));
            }
            if require_complete && !complete {
                v.push(format!("{pid}: block {block} does not hold {TRIALS_PER_BLOCK} trials"));
            }
        }
        let first = recs[0];
        for r in &recs {
            let tag = format!("{pid} trial {}", r.trialnum);
            if r.schema_version != SCHEMA_VERSION {
                v.push(format!("{tag}: schema version {}", r.schema_version));
            }
            if (r.condition, r.experiment, r.block_order) != (first.condition, first.experiment, first.block_order) {
                v.push(format!("{tag}: condition changes within the session"));
            }
            let expected_block = (r.trialnum - 1) / TRIALS_PER_BLOCK as u32 + 1;
            if r.block_index != expected_block {
                v.push(format!("{tag}: block {} but trial number implies {expected_block}", r.block_index));
            }
            let rule = match ctx.rule(r.rule_id) {
                Ok(rule) => rule,
                Err(_) => {
                    v.push(format!("{tag}: unknown rule {}", r.rule_id));
                    continue;
                }
            };
            if (rule.mu(), rule.sigma()) != (r.mu, r.sigma) {
                v.push(format!("{tag}: rule parameters differ from stimulus {}", r.rule_id));
            }
            let eu = expected_utility(rule, ctx.cost(), r.bid);
            if r.expected_utility != eu {
                v.push(format!("{tag}: logged expected utility {} != {eu}", r.expected_utility));
            }
            if r.excluded != (eu < 0.0) {
                v.push(format!("{tag}: excluded = {} but expected utility is {eu}", r.excluded));
            }
            match r.payoff_mode {
                PayoffMode::Deterministic => {
                    if r.outcome.payoff != eu || r.outcome.won.is_some() {
                        v.push(format!("{tag}: deterministic payoff {} != expected utility {eu}", r.outcome.payoff));
                    }
                }
                PayoffMode::Stochastic => {
                    let ok = match (r.outcome.won, r.outcome.opponent_bid) {
                        (Some(won), Some(x)) => {
                            won == (r.bid < x) && r.outcome.payoff == if won { r.bid - r.cost } else { 0.0 }
                        }
                        _ => false,
                    };
                    if !ok {
                        v.push(format!("{tag}: stochastic outcome inconsistent with the opponent draw"));
                    }
                }
            }
            if r.inferred_cost_br.is_some() != r.feedback.shows_inferred_cost() {
                v.push(format!("{tag}: inferred cost presence does not match feedback condition"));
            }
        }
    }
    Ok(report)
}
