//! Allocation-rule stimuli.
//!
//! Opponent distributions are drawn by rejection sampling so that the ten
//! rules induce clearly different best responses at the reference cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::RulePrior;
use crate::auction::{best_response, AllocationRule, BidGrid, Cost, RiskParam};
use crate::{Error, Result, ENDOWED_COST};

/// Number of rules in a stimulus set (one per trial of a block).
pub const STIMULUS_COUNT: usize = 10;

const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParamRanges {
    pub mu: (f64, f64),
    pub sigma: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges { mu: (90.0, 130.0), sigma: (5.0, 20.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StimulusSet {
    pub seed: u64,
    pub reference_cost: f64,
    pub delta: f64,
    pub ranges: ParamRanges,
    pub rules: Vec<AllocationRule>,
}

const CANONICAL: &str = include_str!("../fixtures/canonical_stimuli.json");

impl StimulusSet {
    /// The pinned stimulus set used by the acceptance suite and the presets.
    pub fn canonical() -> Self {
        serde_json::from_str(CANONICAL).expect("canonical stimulus fixture is valid")
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rule(&self, id: usize) -> Result<&AllocationRule> {
        self.rules
            .get(id)
            .ok_or_else(|| Error::config(format!("no stimulus with id {id}")))
    }

    /// Uniform prior over the rules.
    pub fn prior(&self) -> Result<RulePrior> {
        RulePrior::uniform(&self.rules)
    }

    /// Risk-neutral best responses at the reference cost on the fine grid.
    pub fn best_responses(&self) -> Result<Vec<f64>> {
        let grid = BidGrid::fine();
        let cost = Cost::new(self.reference_cost)?;
        self.rules
            .iter()
            .map(|r| best_response(r, cost, &grid, RiskParam::NEUTRAL))
            .collect()
    }
}

/// Draw [`STIMULUS_COUNT`] rules whose best responses at the endowed cost are
/// pairwise at least `delta` apart.
pub fn generate_stimuli(seed: u64, ranges: ParamRanges, delta: f64) -> Result<StimulusSet> {
    let (mu_lo, mu_hi) = ranges.mu;
    let (s_lo, s_hi) = ranges.sigma;
    if !(s_lo > 0.0 && s_lo <= s_hi && mu_lo <= mu_hi) || !delta.is_finite() || delta < 0.0 {
        return Err(Error::config(format!("invalid stimulus ranges {ranges:?} / delta {delta}")));
    }
    let grid = BidGrid::fine();
    let cost = Cost::new(ENDOWED_COST)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rules = Vec::with_capacity(STIMULUS_COUNT);
    let mut responses: Vec<f64> = Vec::with_capacity(STIMULUS_COUNT);
    let mut rejections = 0;
    while rules.len() < STIMULUS_COUNT {
        let mu = if mu_hi > mu_lo { rng.random_range(mu_lo..mu_hi) } else { mu_lo };
        let sigma = if s_hi > s_lo { rng.random_range(s_lo..s_hi) } else { s_lo };
        let rule = AllocationRule::new(mu, sigma)?;
        let br = best_response(&rule, cost, &grid, RiskParam::NEUTRAL)?;
        if responses.iter().all(|&other| (other - br).abs() >= delta) {
            rules.push(rule);
            responses.push(br);
        } else {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::config(format!(
                    "parameter ranges too narrow: {MAX_REJECTIONS} rejections with delta {delta}"
                )));
            }
        }
    }
    Ok(StimulusSet { seed, reference_cost: ENDOWED_COST, delta, ranges, rules })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_delta_accepts_first_draws() {
        let set = generate_stimuli(3, ParamRanges::default(), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for rule in &set.rules {
            let mu: f64 = rng.random_range(90.0..130.0);
            let sigma: f64 = rng.random_range(5.0..20.0);
            assert_eq!((rule.mu(), rule.sigma()), (mu, sigma));
        }
    }

    #[test]
    fn deterministic_and_separated() {
        let a = generate_stimuli(42, ParamRanges::default(), 1.0).unwrap();
        let b = generate_stimuli(42, ParamRanges::default(), 1.0).unwrap();
        assert_eq!(a, b);
        let brs = a.best_responses().unwrap();
        for i in 0..brs.len() {
            for j in 0..i {
                assert!((brs[i] - brs[j]).abs() >= 1.0);
            }
        }
    }

    #[test]
    fn narrow_ranges_fail() {
        let ranges = ParamRanges { mu: (100.0, 100.0), sigma: (15.0, 15.0) };
        assert!(matches!(generate_stimuli(1, ranges, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn canonical_fixture_matches_generator() {
        let canonical = StimulusSet::canonical();
        let regenerated = generate_stimuli(canonical.seed, canonical.ranges, canonical.delta).unwrap();
        assert_eq!(canonical, regenerated);
        assert_eq!(canonical.len(), STIMULUS_COUNT);
    }
}
