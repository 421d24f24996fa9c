//! Synthetic replications of the two bidding experiments: design,
//! per-trial execution, logging, audit and summaries.

mod audit;
mod config;
mod design;
mod run;
mod summary;

pub use audit::{audit_records, AuditReport};
pub use config::{ExperimentConfig, StimuliConfig, DEFAULT_LAMBDA, DEFAULT_N_PER_CONDITION, DEFAULT_RISK};
pub use design::{
    build_experiment1, build_experiment2, BlockOrder, BlockPlan, Condition, ExperimentKind, Feedback, SessionConfig,
    TrialSlot, BLOCKS, COMBINED_TRUE_COST_TRIALS, TRIALS_PER_BLOCK, TRIALS_PER_SESSION,
};
pub(crate) use design::session_for;
pub use run::{
    instantiate_agent, read_jsonl, run_session, simulate, write_jsonl, ExclusionReason, StimulusContext, TrialRecord,
};
pub use summary::{
    bootstrap_mean_ci, summarize, write_summary_csv, IncentiveScheme, SummaryOptions, SummaryRow, DEFAULT_RESAMPLES,
    INCENTIVE_MARGIN,
};
