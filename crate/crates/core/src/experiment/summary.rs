use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::run::TrialRecord;
use crate::auction::{BidGrid, Cost};
use crate::benchmarks::{baseline_score, benchmark_score};
use crate::agents::RulePrior;
use crate::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 10_000;

/// Target premium of optimal over prior-only behavior.
pub const INCENTIVE_MARGIN: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SummaryOptions {
    pub resamples: usize,
    pub seed: u64,
    /// Per-trial fixed fee added to expected utility for the bonus column.
    pub incentive_fee: Option<f64>,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions { resamples: DEFAULT_RESAMPLES, seed: 0, incentive_fee: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SummaryRow {
    pub condition: String,
    pub n_trials: usize,
    pub n_included: usize,
    pub mean_ratio: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Share of included bids strictly below the risk-neutral best response.
    pub undershading_rate: Option<f64>,
    pub exclusion_rate: f64,
    pub mean_expected_utility: Option<f64>,
    pub mean_bonus: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap 95% interval of the mean.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::domain("no values to resample"));
    }
    if resamples == 0 {
        return Err(Error::config("bootstrap needs at least one resample"));
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((quantile(&means, 0.025), quantile(&means, 0.975)))
}

/// Condition-level means, rates and bootstrap intervals.
///
/// Ratios, undershading and utilities are computed over included trials;
/// the exclusion rate over all trials. Errors when every trial is excluded.
pub fn summarize(records: &[TrialRecord], opts: &SummaryOptions) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::domain("no trial records"));
    }
    if records.iter().all(|r| r.excluded) {
        return Err(Error::domain("every trial is excluded; nothing to summarize"));
    }
    let mut groups: BTreeMap<String, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.condition_label()).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (k, (condition, recs)) in groups.into_iter().enumerate() {
        let included: Vec<&&TrialRecord> = recs.iter().filter(|r| !r.excluded).collect();
        let ratios: Vec<f64> = included.iter().map(|r| r.bid_optimization_ratio).collect();
        let (mean_ratio, ci, undershading, mean_eu) = if ratios.is_empty() {
            (None, None, None, None)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(k as u64);
            let under = included.iter().filter(|r| r.bid < r.best_response).count() as f64 / included.len() as f64;
            let eu: Vec<f64> = included.iter().map(|r| r.expected_utility).collect();
            (
                Some(mean(&ratios)),
                Some(bootstrap_mean_ci(&ratios, opts.resamples, &mut rng)?),
                Some(under),
                Some(mean(&eu)),
            )
        };
        rows.push(SummaryRow {
            condition,
            n_trials: recs.len(),
            n_included: included.len(),
            mean_ratio,
            ci_low: ci.map(|c| c.0),
            ci_high: ci.map(|c| c.1),
            undershading_rate: undershading,
            exclusion_rate: (recs.len() - included.len()) as f64 / recs.len() as f64,
            mean_expected_utility: mean_eu,
            mean_bonus: opts.incentive_fee.zip(mean_eu).map(|(fee, eu)| fee + eu),
        });
    }
    Ok(rows)
}

/// Per-trial fee under which optimal play earns [`INCENTIVE_MARGIN`] more
/// than the prior-only agent: `fee + benchmark = (1 + m)(fee + baseline)`.
/// The fee is negative when the raw benchmark already exceeds the margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IncentiveScheme {
    pub baseline: f64,
    pub benchmark: f64,
    pub fee: f64,
}

impl IncentiveScheme {
    pub fn new(prior: &RulePrior, cost: Cost, grid: &BidGrid) -> Result<Self> {
        let baseline = baseline_score(prior, cost, grid)?;
        let benchmark = benchmark_score(prior, cost, grid)?;
        let fee = (benchmark - (1.0 + INCENTIVE_MARGIN) * baseline) / INCENTIVE_MARGIN;
        Ok(IncentiveScheme { baseline, benchmark, fee })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "condition",
        "n_trials",
        "n_included",
        "mean_ratio",
        "ci_low",
        "ci_high",
        "undershading_rate",
        "exclusion_rate",
        "mean_expected_utility",
        "mean_bonus",
    ])?;
    for r in rows {
        w.write_record([
            r.condition.clone(),
            r.n_trials.to_string(),
            r.n_included.to_string(),
            opt(r.mean_ratio),
            opt(r.ci_low),
            opt(r.ci_high),
            opt(r.undershading_rate),
            r.exclusion_rate.to_string(),
            opt(r.mean_expected_utility),
            opt(r.mean_bonus),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentSpec;
    use crate::experiment::design::build_experiment1;
    use crate::experiment::run::{simulate, StimulusContext};
    use crate::stimuli::StimulusSet;

    fn records() -> Vec<TrialRecord> {
        let ctx = StimulusContext::new(StimulusSet::canonical()).unwrap();
        let sessions = build_experiment1(ctx.stimuli(), &AgentSpec::Rational, 1, 1).unwrap();
        simulate(&ctx, &sessions).unwrap()
    }

    fn with_ratio(mut r: TrialRecord, ratio: f64) -> TrialRecord {
        r.bid_optimization_ratio = ratio;
        r
    }

    #[test]
    fn single_record_degenerate_interval() {
        let r = with_ratio(records().remove(0), 0.8);
        let rows = summarize(&[r], &SummaryOptions { resamples: 100, ..Default::default() }).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean_ratio, Some(0.8));
        assert_eq!((rows[0].ci_low, rows[0].ci_high), (Some(0.8), Some(0.8)));
    }

    #[test]
    fn mean_of_two() {
        let mut recs = records();
        let b = with_ratio(recs.remove(1), 1.0);
        let a = with_ratio(recs.remove(0), 0.5);
        let rows = summarize(&[a, b], &SummaryOptions { resamples: 200, ..Default::default() }).unwrap();
        assert_eq!(rows[0].mean_ratio, Some(0.75));
        let (lo, hi) = (rows[0].ci_low.unwrap(), rows[0].ci_high.unwrap());
        assert!(lo >= 0.5 && hi <= 1.0 && lo <= hi);
    }

    #[test]
    fn all_excluded_is_an_error() {
        let recs: Vec<TrialRecord> = records()
            .into_iter()
            .map(|mut r| {
                r.excluded = true;
                r
            })
            .collect();
        assert!(summarize(&recs, &SummaryOptions::default()).is_err());
        assert!(summarize(&[], &SummaryOptions::default()).is_err());
    }

    #[test]
    fn summary_is_seeded() {
        let recs = records();
        let opts = SummaryOptions { resamples: 500, seed: 4, incentive_fee: Some(1.0) };
        let a = summarize(&recs, &opts).unwrap();
        assert_eq!(a, summarize(&recs, &opts).unwrap());
        assert!(a.iter().all(|r| r.mean_bonus.is_some() && r.undershading_rate == Some(0.0)));
    }

    #[test]
    fn incentive_fee_meets_margin() {
        let ctx = StimulusContext::new(StimulusSet::canonical()).unwrap();
        let s = IncentiveScheme::new(ctx.prior(), ctx.cost(), &BidGrid::fine()).unwrap();
        let lhs = s.fee + s.benchmark;
        let rhs = (1.0 + INCENTIVE_MARGIN) * (s.fee + s.baseline);
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
