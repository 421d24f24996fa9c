use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AgentSpec;
use crate::auction::PayoffMode;
use crate::dashboard::Variant;
use crate::stimuli::{StimulusSet, STIMULUS_COUNT};
use crate::{Error, Result};

pub const BLOCKS: usize = 2;
pub const TRIALS_PER_BLOCK: usize = STIMULUS_COUNT;
pub const TRIALS_PER_SESSION: usize = BLOCKS * TRIALS_PER_BLOCK;

/// Trials of the combined training condition that show the true-cost curve.
pub const COMBINED_TRUE_COST_TRIALS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Visualization between subjects, feedback within subjects.
    Exp1,
    /// Deterministic training block, stochastic transfer block.
    Exp2,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Exp1 => "exp1",
            ExperimentKind::Exp2 => "exp2",
        }
    }

    pub fn conditions(self) -> [Condition; 3] {
        match self {
            ExperimentKind::Exp1 => [Condition::Allocation, Condition::Curves, Condition::Heatmap],
            ExperimentKind::Exp2 => [Condition::TrueCost, Condition::HypotheticalCurves, Condition::Combined],
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(ExperimentKind::Exp1),
            "exp2" => Ok(ExperimentKind::Exp2),
            _ => Err(Error::NotFound(format!("unknown experiment {s:?}"))),
        }
    }
}

/// Between-subjects condition: a visualization (exp1) or a training
/// condition (exp2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Allocation,
    Curves,
    Heatmap,
    TrueCost,
    HypotheticalCurves,
    Combined,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Allocation => "allocation",
            Condition::Curves => "curves",
            Condition::Heatmap => "heatmap",
            Condition::TrueCost => "true_cost",
            Condition::HypotheticalCurves => "hypothetical_curves",
            Condition::Combined => "combined",
        }
    }

    pub fn experiment(self) -> ExperimentKind {
        match self {
            Condition::Allocation | Condition::Curves | Condition::Heatmap => ExperimentKind::Exp1,
            _ => ExperimentKind::Exp2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    PayoffOnly,
    PayoffPlusInferredCost,
}

impl Feedback {
    pub fn as_str(self) -> &'static str {
        match self {
            Feedback::PayoffOnly => "payoff_only",
            Feedback::PayoffPlusInferredCost => "payoff_plus_inferred_cost",
        }
    }

    pub fn shows_inferred_cost(self) -> bool {
        self == Feedback::PayoffPlusInferredCost
    }
}

/// Which feedback block comes first (exp1 only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrder {
    PayoffFirst,
    InferredCostFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BlockPlan {
    pub feedback: Feedback,
    pub payoff_mode: PayoffMode,
    /// Stimulus ids in presentation order; a permutation of `0..10`.
    pub stimulus_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionConfig {
    pub participant_id: String,
    pub experiment: ExperimentKind,
    pub condition: Condition,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub block_order: Option<BlockOrder>,
    pub blocks: Vec<BlockPlan>,
    /// Root of the session's random streams.
    pub seed: u64,
    /// Synthetic bidder model; absent for live sessions.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub agent: Option<AgentSpec>,
}

/// Position of one trial within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSlot {
    /// 1-based, 1..=20.
    pub trialnum: u32,
    /// 1-based block index.
    pub block_index: u32,
    /// 1-based position within the block.
    pub trial_in_block: u32,
}

impl TrialSlot {
    /// Slot of the 0-based trial cursor.
    pub fn from_cursor(cursor: usize) -> Self {
        TrialSlot {
            trialnum: cursor as u32 + 1,
            block_index: (cursor / TRIALS_PER_BLOCK) as u32 + 1,
            trial_in_block: (cursor % TRIALS_PER_BLOCK) as u32 + 1,
        }
    }

    pub fn is_block_end(self) -> bool {
        self.trial_in_block as usize == TRIALS_PER_BLOCK
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() != BLOCKS {
            return Err(Error::config(format!("session needs {BLOCKS} blocks, got {}", self.blocks.len())));
        }
        if self.condition.experiment() != self.experiment {
            return Err(Error::config(format!(
                "condition {} does not belong to {}",
                self.condition.as_str(),
                self.experiment.as_str()
            )));
        }
        for b in &self.blocks {
            let mut seen = b.stimulus_order.clone();
            seen.sort_unstable();
            if seen != (0..TRIALS_PER_BLOCK).collect::<Vec<_>>() {
                return Err(Error::config("stimulus order must be a permutation of the stimuli"));
            }
        }
        if let Some(agent) = &self.agent {
            agent.validate()?;
        }
        Ok(())
    }

    pub fn block(&self, slot: TrialSlot) -> &BlockPlan {
        &self.blocks[slot.block_index as usize - 1]
    }

    pub fn rule_id(&self, slot: TrialSlot) -> usize {
        self.block(slot).stimulus_order[slot.trial_in_block as usize - 1]
    }

    /// Dashboard shown on a trial.
    pub fn variant(&self, slot: TrialSlot) -> Variant {
        match self.condition {
            Condition::Allocation => Variant::Allocation,
            Condition::Curves => Variant::Curves,
            Condition::Heatmap => Variant::Heatmap,
            _ if slot.block_index > 1 => Variant::Curves,
            Condition::TrueCost => Variant::TrueCostCurve,
            Condition::HypotheticalCurves => Variant::Curves,
            Condition::Combined if slot.trial_in_block as usize <= COMBINED_TRUE_COST_TRIALS => {
                Variant::TrueCostCurve
            }
            Condition::Combined => Variant::Curves,
        }
    }
}

/// Random permutation of the stimulus ids.
fn shuffled(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..TRIALS_PER_BLOCK).collect();
    order.shuffle(rng);
    order
}

/// Participant-level design draws for one assigned condition.
pub(crate) fn session_for(
    experiment: ExperimentKind,
    condition: Condition,
    participant_id: String,
    rng: &mut ChaCha8Rng,
    agent: Option<AgentSpec>,
) -> SessionConfig {
    let (block_order, blocks) = match experiment {
        ExperimentKind::Exp1 => {
            let order = if rng.random_bool(0.5) { BlockOrder::PayoffFirst } else { BlockOrder::InferredCostFirst };
            let feedbacks = match order {
                BlockOrder::PayoffFirst => [Feedback::PayoffOnly, Feedback::PayoffPlusInferredCost],
                BlockOrder::InferredCostFirst => [Feedback::PayoffPlusInferredCost, Feedback::PayoffOnly],
            };
            let blocks = feedbacks
                .iter()
                .map(|&feedback| BlockPlan {
                    feedback,
                    payoff_mode: PayoffMode::Stochastic,
                    stimulus_order: shuffled(rng),
                })
                .collect();
            (Some(order), blocks)
        }
        ExperimentKind::Exp2 => {
            let blocks = [PayoffMode::Deterministic, PayoffMode::Stochastic]
                .iter()
                .map(|&payoff_mode| BlockPlan {
                    feedback: Feedback::PayoffOnly,
                    payoff_mode,
                    stimulus_order: shuffled(rng),
                })
                .collect();
            (None, blocks)
        }
    };
    SessionConfig {
        participant_id,
        experiment,
        condition,
        block_order,
        blocks,
        seed: rng.next_u64(),
        agent,
    }
}

fn build(
    experiment: ExperimentKind,
    stimuli: &StimulusSet,
    agent: &AgentSpec,
    n_per_condition: usize,
    seed: u64,
) -> Result<Vec<SessionConfig>> {
    if n_per_condition == 0 {
        return Err(Error::config("n_per_condition must be at least 1"));
    }
    if stimuli.len() != STIMULUS_COUNT {
        return Err(Error::config(format!("experiments need {STIMULUS_COUNT} stimuli, got {}", stimuli.len())));
    }
    agent.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: Vec<Condition> = experiment
        .conditions()
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, n_per_condition))
        .collect();
    assignment.shuffle(&mut rng);
    let width = (assignment.len() as f64).log10().floor() as usize + 1;
    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(i, condition)| {
            let id = format!("{}-p{:0width$}", experiment.as_str(), i + 1);
            session_for(experiment, condition, id, &mut rng, Some(agent.clone()))
        })
        .collect())
}

/// Balanced assignment of `3 · n_per_condition` synthetic participants to
/// the visualization conditions, with random block and stimulus orders.
pub fn build_experiment1(
    stimuli: &StimulusSet,
    agent: &AgentSpec,
    n_per_condition: usize,
    seed: u64,
) -> Result<Vec<SessionConfig>> {
    build(ExperimentKind::Exp1, stimuli, agent, n_per_condition, seed)
}

/// As [`build_experiment1`] for the training conditions; block 1 is
/// deterministic and block 2 stochastic with hypothetical curves.
pub fn build_experiment2(
    stimuli: &StimulusSet,
    agent: &AgentSpec,
    n_per_condition: usize,
    seed: u64,
) -> Result<Vec<SessionConfig>> {
    build(ExperimentKind::Exp2, stimuli, agent, n_per_condition, seed)
}
