//! Browser bindings for the dashboard demo in `www/`.
//!
//! Every export has a plain Rust twin in [`ops`] so the logic is testable
//! off the browser.

use wasm_bindgen::prelude::*;

pub mod ops {
    use dashlab::agents::{quantal_choice_distribution, QuantalParams};
    use dashlab::auction::{best_response_with_utility, BidGrid, Cost, RiskParam};
    use dashlab::dashboard::{default_payload, Variant};
    use dashlab::stimuli::StimulusSet;
    use dashlab::Result;
    use serde_json::json;

    fn stimuli() -> StimulusSet {
        StimulusSet::canonical()
    }

    /// Means and spreads of the ten canonical stimuli.
    pub fn stimuli_json() -> Result<String> {
        let rules: Vec<_> = stimuli()
            .rules
            .iter()
            .enumerate()
            .map(|(id, r)| json!({"id": id, "mu": r.mu(), "sigma": r.sigma()}))
            .collect();
        Ok(serde_json::to_string(&rules)?)
    }

    /// Dashboard payload of one variant for one canonical stimulus.
    pub fn dashboard_payload(variant: &str, rule_id: usize) -> Result<String> {
        let set = stimuli();
        let payload = default_payload(variant.parse::<Variant>()?, rule_id, set.rule(rule_id)?)?;
        Ok(serde_json::to_string(&payload)?)
    }

    /// Optimal bid and its expected utility on the fine grid for a bidder
    /// with CRRA coefficient `r`.
    pub fn best_response(rule_id: usize, cost: f64, r: f64) -> Result<(f64, f64)> {
        let set = stimuli();
        best_response_with_utility(set.rule(rule_id)?, Cost::new(cost)?, &BidGrid::fine(), RiskParam::new(r)?)
    }

    /// Quantal choice probabilities over the 1 AC grid `[0, 200]`.
    pub fn quantal_distribution(rule_id: usize, cost: f64, lambda: f64, r: f64) -> Result<Vec<f64>> {
        let set = stimuli();
        quantal_choice_distribution(
            set.rule(rule_id)?,
            Cost::new(cost)?,
            QuantalParams::new(lambda)?,
            RiskParam::new(r)?,
            &BidGrid::coarse(),
        )
    }
}

fn js(e: dashlab::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = stimuli)]
pub fn stimuli() -> Result<String, JsError> {
    ops::stimuli_json().map_err(js)
}

#[wasm_bindgen(js_name = dashboardPayload)]
pub fn dashboard_payload(variant: &str, rule_id: usize) -> Result<String, JsError> {
    ops::dashboard_payload(variant, rule_id).map_err(js)
}

/// Returns `[bid, expectedUtility]`.
#[wasm_bindgen(js_name = bestResponse)]
pub fn best_response(rule_id: usize, cost: f64, r: f64) -> Result<Vec<f64>, JsError> {
    ops::best_response(rule_id, cost, r).map(|(b, u)| vec![b, u]).map_err(js)
}

#[wasm_bindgen(js_name = quantalDistribution)]
pub fn quantal_distribution(rule_id: usize, cost: f64, lambda: f64, r: f64) -> Result<Vec<f64>, JsError> {
    ops::quantal_distribution(rule_id, cost, lambda, r).map_err(js)
}
