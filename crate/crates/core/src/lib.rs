//! Laboratory for dashboard mechanisms in reverse first-price auctions.
//!
//! A participant with a private cost bids against a computer opponent whose
//! bid is drawn from a known normal distribution. The lowest bid wins and is
//! paid its bid. The crate provides:
//!
//! - [`auction`]: win probabilities, (risk-averse) expected utilities, best
//!   responses and the bid optimization ratio.
//! - [`agents`]: synthetic bidders (rational, quantal response with optional
//!   CRRA utility, fixed shading, prior-only baseline).
//! - [`inference`]: recover private costs from bids under best-response,
//!   quantal-response and risk-averse quantal-response assumptions.
//! - [`benchmarks`]: baseline / benchmark / calibrated rational-agent scores.
//! - [`stimuli`] and [`dashboard`]: allocation-rule stimuli and the
//!   visualization payloads shown to bidders.
//! - [`experiment`]: session designs, synthetic replication runs, logs and
//!   summaries.
//! - [`session`]: the live bidding protocol used by the HTTP service.

pub mod agents;
pub mod auction;
pub mod benchmarks;
pub mod dashboard;
mod error;
pub mod experiment;
pub mod inference;
pub mod normal;
mod numeric;
pub mod session;
pub mod stimuli;

pub use error::{Error, Result};

/// Every log line, payload and export carries this version.
pub const SCHEMA_VERSION: u32 = 1;

/// Private cost endowed to every participant in the study design, in AC.
pub const ENDOWED_COST: f64 = 85.0;
