//! Cost inference from observed bids under best-response, quantal-response
//! and risk-averse quantal-response models.

pub mod best_response;
pub mod optimize;
pub mod quantal;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::auction::{AllocationRule, BidGrid, RiskParam};
use crate::experiment::TrialRecord;
use crate::{Error, Result};
use best_response::{BestResponseTable, RangeSide};
use quantal::{ChoiceModel, FitBounds, FitObjective, ParticipantData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "BR")]
    Br,
    #[serde(rename = "QR")]
    Qr,
    #[serde(rename = "QR_CRRA")]
    QrCrra,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Br, ModelKind::Qr, ModelKind::QrCrra];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Br => "BR",
            ModelKind::Qr => "QR",
            ModelKind::QrCrra => "QR_CRRA",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "br" | "best_response" => Ok(ModelKind::Br),
            "qr" => Ok(ModelKind::Qr),
            "qr_crra" | "qr-crra" => Ok(ModelKind::QrCrra),
            _ => Err(Error::config(format!("unknown model {s:?} (expected br, qr or qr_crra)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Bid below every best response on the cost grid.
    BelowRange,
    /// Bid above every best response on the cost grid.
    AboveRange,
    LambdaAtUpperBound,
    LambdaAtLowerBound,
    CostAtBound,
    /// Likelihood too flat in cost to identify it.
    LowInformation,
    NotConverged,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::BelowRange => "below_range",
            Flag::AboveRange => "above_range",
            Flag::LambdaAtUpperBound => "lambda_at_upper_bound",
            Flag::LambdaAtLowerBound => "lambda_at_lower_bound",
            Flag::CostAtBound => "cost_at_bound",
            Flag::LowInformation => "low_information",
            Flag::NotConverged => "not_converged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InferenceResult {
    pub participant_id: String,
    /// Set for per-bid (best-response) inferences.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trialnum: Option<u32>,
    pub model: ModelKind,
    pub inferred_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub log_likelihood: Option<f64>,
    /// Largest distance from an observed bid to its choice-grid bid.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub snap_distance: Option<f64>,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Observation {
    pub participant_id: String,
    pub trialnum: u32,
    pub rule_id: usize,
    pub bid: f64,
}

/// Bids of many participants on a shared set of rules.
#[derive(Debug, Clone, PartialEq)]
pub struct BidDataset {
    pub rules: Vec<AllocationRule>,
    pub true_cost: f64,
    pub observations: Vec<Observation>,
}

impl BidDataset {
    pub fn new(rules: Vec<AllocationRule>, true_cost: f64, observations: Vec<Observation>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::config("dataset has no rules"));
        }
        for o in &observations {
            if o.rule_id >= rules.len() {
                return Err(Error::domain(format!("observation references unknown rule {}", o.rule_id)));
            }
            if !o.bid.is_finite() {
                return Err(Error::domain(format!("bid must be finite, got {}", o.bid)));
            }
        }
        Ok(BidDataset { rules, true_cost, observations })
    }

    /// Build from trial logs. Excluded trials are dropped unless
    /// `keep_excluded` is set.
    pub fn from_records(rules: Vec<AllocationRule>, records: &[TrialRecord], keep_excluded: bool) -> Result<Self> {
        let true_cost = match records.first() {
            Some(r) => r.cost,
            None => return Err(Error::domain("no trial records")),
        };
        if records.iter().any(|r| r.cost != true_cost) {
            return Err(Error::domain("records mix different endowed costs"));
        }
        let observations = records
            .iter()
            .filter(|r| keep_excluded || !r.excluded)
            .map(|r| Observation {
                participant_id: r.participant_id.clone(),
                trialnum: r.trialnum,
                rule_id: r.rule_id,
                bid: r.bid,
            })
            .collect();
        BidDataset::new(rules, true_cost, observations)
    }

    /// Observations grouped by participant, in id order.
    pub fn by_participant(&self) -> BTreeMap<&str, Vec<&Observation>> {
        let mut map: BTreeMap<&str, Vec<&Observation>> = BTreeMap::new();
        for o in &self.observations {
            map.entry(o.participant_id.as_str()).or_default().push(o);
        }
        map
    }

    fn participant_data(&self, model: &ChoiceModel) -> Result<Vec<ParticipantData>> {
        self.by_participant()
            .into_iter()
            .map(|(id, obs)| {
                let pairs: Vec<(usize, f64)> = obs.iter().map(|o| (o.rule_id, o.bid)).collect();
                ParticipantData::new(model, id, &pairs)
            })
            .collect()
    }
}

/// Per-bid best-response inversion on the fine grids.
pub fn infer_best_response(dataset: &BidDataset) -> Result<Vec<InferenceResult>> {
    let tables: Vec<BestResponseTable> = dataset.rules.iter().map(BestResponseTable::fine).collect();
    dataset
        .observations
        .iter()
        .map(|o| {
            let inv = tables[o.rule_id].invert(o.bid)?;
            let flags = match inv.out_of_range {
                Some(RangeSide::Below) => vec![Flag::BelowRange],
                Some(RangeSide::Above) => vec![Flag::AboveRange],
                None => Vec::new(),
            };
            Ok(InferenceResult {
                participant_id: o.participant_id.clone(),
                trialnum: Some(o.trialnum),
                model: ModelKind::Br,
                inferred_cost: inv.cost,
                lambda_hat: None,
                r_hat: None,
                log_likelihood: None,
                snap_distance: None,
                flags,
            })
        })
        .collect()
}

/// Risk-neutral quantal response fit per participant.
pub fn infer_quantal(dataset: &BidDataset, bounds: &FitBounds, objective: FitObjective) -> Result<Vec<InferenceResult>> {
    let model = ChoiceModel::new(&dataset.rules, BidGrid::coarse());
    let data = dataset.participant_data(&model)?;
    quantal::fit_population_at(&model, &data, RiskParam::NEUTRAL, bounds, objective)
}

/// Quantal response with a population CRRA coefficient.
pub fn infer_quantal_crra(dataset: &BidDataset, bounds: &FitBounds) -> Result<quantal::PopulationFit> {
    let model = ChoiceModel::new(&dataset.rules, BidGrid::coarse());
    let data = dataset.participant_data(&model)?;
    quantal::fit_qr_crra_population(&model, &data, bounds)
}

/// Mean squared error of the inferred costs.
pub fn inference_mse(results: &[InferenceResult], true_cost: f64) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::domain("no inference results"));
    }
    Ok(results.iter().map(|r| (r.inferred_cost - true_cost).powi(2)).sum::<f64>() / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MseRow {
    pub model: ModelKind,
    pub n: usize,
    pub mse: f64,
    pub n_flagged: usize,
    /// MSE over results without flags; absent when every result is flagged.
    pub mse_unflagged: Option<f64>,
    pub r_hat: Option<f64>,
}

impl MseRow {
    pub fn new(model: ModelKind, results: &[InferenceResult], true_cost: f64, r_hat: Option<f64>) -> Result<Self> {
        let clean: Vec<InferenceResult> = results.iter().filter(|r| r.flags.is_empty()).cloned().collect();
        Ok(MseRow {
            model,
            n: results.len(),
            mse: inference_mse(results, true_cost)?,
            n_flagged: results.len() - clean.len(),
            mse_unflagged: inference_mse(&clean, true_cost).ok(),
            r_hat,
        })
    }
}

/// Output of [`compare_models`].
#[derive(Debug, Clone)]
pub struct ModelComparison {
    pub rows: Vec<MseRow>,
    pub results: Vec<InferenceResult>,
}

impl ModelComparison {
    pub fn row(&self, model: ModelKind) -> Option<&MseRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

/// Fit the requested models and tabulate their MSE against the true cost.
pub fn compare_models(dataset: &BidDataset, models: &[ModelKind], bounds: &FitBounds) -> Result<ModelComparison> {
    compare_models_with(dataset, models, bounds, FitObjective::Likelihood)
}

/// [`compare_models`] with another objective for the risk-neutral quantal
/// fit. The shared-`r` search always maximizes likelihood.
pub fn compare_models_with(
    dataset: &BidDataset,
    models: &[ModelKind],
    bounds: &FitBounds,
    objective: FitObjective,
) -> Result<ModelComparison> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &m in models {
        let (res, r_hat) = match m {
            ModelKind::Br => (infer_best_response(dataset)?, None),
            ModelKind::Qr => (infer_quantal(dataset, bounds, objective)?, None),
            ModelKind::QrCrra => {
                let fit = infer_quantal_crra(dataset, bounds)?;
                (fit.results, Some(fit.r_hat))
            }
        };
        rows.push(MseRow::new(m, &res, dataset.true_cost, r_hat)?);
        results.extend(res);
    }
    Ok(ModelComparison { rows, results })
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_results_csv<W: Write>(out: W, results: &[InferenceResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "participant_id",
        "trialnum",
        "model",
        "inferred_cost",
        "lambda_hat",
        "r_hat",
        "log_likelihood",
        "snap_distance",
        "flags",
    ])?;
    for r in results {
        let flags: Vec<&str> = r.flags.iter().map(|f| f.as_str()).collect();
        w.write_record([
            r.participant_id.clone(),
            r.trialnum.map(|t| t.to_string()).unwrap_or_default(),
            r.model.as_str().to_string(),
            r.inferred_cost.to_string(),
            opt_field(r.lambda_hat),
            opt_field(r.r_hat),
            opt_field(r.log_likelihood),
            opt_field(r.snap_distance),
            flags.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results_jsonl<W: Write>(mut out: W, results: &[InferenceResult]) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_mse_csv<W: Write>(out: W, rows: &[MseRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "n", "mse", "n_flagged", "mse_unflagged", "r_hat"])?;
    for r in rows {
        w.write_record([
            r.model.as_str().to_string(),
            r.n.to_string(),
            r.mse.to_string(),
            r.n_flagged.to_string(),
            opt_field(r.mse_unflagged),
            opt_field(r.r_hat),
        ])?;
    }
    w.flush()?;
    Ok(())
}
