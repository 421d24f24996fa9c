//! Dashboard payloads: the data behind each visualization condition.
//!
//! Payloads are plain JSON documents; the browser UI renders them without
//! recomputing any utility.

use serde::{Deserialize, Serialize};

use crate::auction::{expected_utility, AllocationRule, Cost};
use crate::{Error, Result, ENDOWED_COST, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Variant {
    /// Win probability as a function of bid.
    Allocation,
    /// Expected utility for three hypothetical costs.
    Curves,
    /// Expected utility over an 11 × 11 cost × bid grid.
    Heatmap,
    /// Expected utility at the participant's own cost.
    TrueCostCurve,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Allocation => "allocation",
            Variant::Curves => "curves",
            Variant::Heatmap => "heatmap",
            Variant::TrueCostCurve => "trueCostCurve",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "allocation" => Ok(Variant::Allocation),
            "curves" => Ok(Variant::Curves),
            "heatmap" => Ok(Variant::Heatmap),
            "trueCostCurve" | "true_cost_curve" | "true-cost-curve" => Ok(Variant::TrueCostCurve),
            other => Err(Error::config(format!("unknown dashboard variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Axis {
    pub unit: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Axes {
    pub bid: Axis,
    pub value: Axis,
    /// Heatmap rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<Axis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Series {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Meta {
    pub costs: Vec<f64>,
    pub grid_step: f64,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DashboardPayload {
    pub variant: Variant,
    pub rule_id: usize,
    pub axes: Axes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<Vec<Series>>,
    /// `matrix[i][j]` is the value at `axes.cost.samples[i]`, `axes.bid.samples[j]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    pub meta: Meta,
}

/// Hypothetical seller costs shown by the utility-curves dashboard.
pub const CURVE_COSTS: [f64; 3] = [50.0, 75.0, 100.0];

/// 101 bids over `[50, 150]` AC.
pub fn default_bid_samples() -> Vec<f64> {
    (0..=100).map(|i| 50.0 + i as f64).collect()
}

/// `{50, 60, ..., 150}`, both heatmap axes.
pub fn heatmap_levels() -> Vec<f64> {
    (0..=10).map(|i| 50.0 + 10.0 * i as f64).collect()
}

fn check_ascending(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain(format!("{name} must be finite, non-empty and strictly ascending")));
    }
    Ok(())
}

fn spacing(samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        0.0
    } else {
        (samples[samples.len() - 1] - samples[0]) / (samples.len() - 1) as f64
    }
}

fn utility_series(rule: &AllocationRule, cost: f64, samples: &[f64]) -> Result<Series> {
    let c = Cost::new(cost)?;
    Ok(Series {
        label: format!("cost {cost} AC"),
        cost: Some(cost),
        values: samples.iter().map(|&b| expected_utility(rule, c, b)).collect(),
    })
}

pub fn allocation_curve(rule_id: usize, rule: &AllocationRule, bid_samples: &[f64]) -> Result<DashboardPayload> {
    check_ascending("bid samples", bid_samples)?;
    Ok(DashboardPayload {
        variant: Variant::Allocation,
        rule_id,
        axes: Axes {
            bid: Axis { unit: "AC".into(), samples: bid_samples.to_vec() },
            value: Axis { unit: "probability".into(), samples: vec![] },
            cost: None,
        },
        series: Some(vec![Series {
            label: "Pr(win | bid)".into(),
            cost: None,
            values: bid_samples.iter().map(|&b| rule.win_prob(b)).collect(),
        }]),
        matrix: None,
        meta: Meta { costs: vec![], grid_step: spacing(bid_samples), version: SCHEMA_VERSION },
    })
}

pub fn utility_curves(
    rule_id: usize,
    rule: &AllocationRule,
    costs: &[f64],
    bid_samples: &[f64],
) -> Result<DashboardPayload> {
    check_ascending("costs", costs)?;
    check_ascending("bid samples", bid_samples)?;
    let series = costs
        .iter()
        .map(|&c| utility_series(rule, c, bid_samples))
        .collect::<Result<Vec<_>>>()?;
    Ok(DashboardPayload {
        variant: Variant::Curves,
        rule_id,
        axes: Axes {
            bid: Axis { unit: "AC".into(), samples: bid_samples.to_vec() },
            value: Axis { unit: "AC".into(), samples: vec![] },
            cost: None,
        },
        series: Some(series),
        matrix: None,
        meta: Meta { costs: costs.to_vec(), grid_step: spacing(bid_samples), version: SCHEMA_VERSION },
    })
}

pub fn utility_heatmap(rule_id: usize, rule: &AllocationRule, costs: &[f64], bids: &[f64]) -> Result<DashboardPayload> {
    check_ascending("costs", costs)?;
    check_ascending("bids", bids)?;
    let matrix = costs
        .iter()
        .map(|&c| utility_series(rule, c, bids).map(|s| s.values))
        .collect::<Result<Vec<_>>>()?;
    Ok(DashboardPayload {
        variant: Variant::Heatmap,
        rule_id,
        axes: Axes {
            bid: Axis { unit: "AC".into(), samples: bids.to_vec() },
            value: Axis { unit: "AC".into(), samples: vec![] },
            cost: Some(Axis { unit: "AC".into(), samples: costs.to_vec() }),
        },
        series: None,
        matrix: Some(matrix),
        meta: Meta { costs: costs.to_vec(), grid_step: spacing(bids), version: SCHEMA_VERSION },
    })
}

pub fn true_cost_curve(rule_id: usize, rule: &AllocationRule, cost: f64, bid_samples: &[f64]) -> Result<DashboardPayload> {
    check_ascending("bid samples", bid_samples)?;
    Ok(DashboardPayload {
        variant: Variant::TrueCostCurve,
        rule_id,
        axes: Axes {
            bid: Axis { unit: "AC".into(), samples: bid_samples.to_vec() },
            value: Axis { unit: "AC".into(), samples: vec![] },
            cost: None,
        },
        series: Some(vec![utility_series(rule, cost, bid_samples)?]),
        matrix: None,
        meta: Meta { costs: vec![cost], grid_step: spacing(bid_samples), version: SCHEMA_VERSION },
    })
}

/// Payload of `variant` with the default sampling and costs.
pub fn default_payload(variant: Variant, rule_id: usize, rule: &AllocationRule) -> Result<DashboardPayload> {
    let samples = default_bid_samples();
    match variant {
        Variant::Allocation => allocation_curve(rule_id, rule, &samples),
        Variant::Curves => utility_curves(rule_id, rule, &CURVE_COSTS, &samples),
        Variant::Heatmap => {
            let levels = heatmap_levels();
            utility_heatmap(rule_id, rule, &levels, &levels)
        }
        Variant::TrueCostCurve => true_cost_curve(rule_id, rule, ENDOWED_COST, &samples),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule() -> AllocationRule {
        AllocationRule::new(100.0, 15.0).unwrap()
    }

    fn argmax(samples: &[f64], values: &[f64]) -> f64 {
        let mut best = 0;
        for i in 1..values.len() {
            if values[i] > values[best] {
                best = i;
            }
        }
        samples[best]
    }

    #[test]
    fn allocation_examples() {
        let p = default_payload(Variant::Allocation, 0, &rule()).unwrap();
        let values = &p.series.as_ref().unwrap()[0].values;
        assert_eq!(values.len(), 101);
        assert_eq!(values[50], 0.5);
        assert!(values.windows(2).all(|w| w[0] > w[1]));
        // 1 − Φ(∓10/3)
        assert!((values[0] - 0.999_570_939_666_803_2).abs() < 1e-12);
        assert!((values[100] - 4.290_603_331_968_375e-4).abs() < 1e-15);
    }

    #[test]
    fn curves_examples() {
        let p = default_payload(Variant::Curves, 0, &rule()).unwrap();
        let series = p.series.unwrap();
        assert_eq!(series.len(), 3);
        let bids = &p.axes.bid.samples;
        for s in &series {
            let c = s.cost.unwrap();
            let i = bids.iter().position(|&b| b == c).unwrap();
            assert_eq!(s.values[i], 0.0);
        }
        for (i, &b) in bids.iter().enumerate() {
            if b >= 75.0 {
                assert!(series[0].values[i] >= series[1].values[i]);
            }
        }
        let peak75 = argmax(bids, &series[1].values);
        let peak100 = argmax(bids, &series[2].values);
        assert!(peak75 <= peak100);
    }

    #[test]
    fn heatmap_examples() {
        let p = default_payload(Variant::Heatmap, 0, &rule()).unwrap();
        let m = p.matrix.unwrap();
        assert_eq!(m.len(), 11);
        assert!(m.iter().all(|row| row.len() == 11));
        for i in 0..11 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..i {
                assert!(m[i][j] <= 0.0);
            }
        }
        // cost 80 (row 3), bid 100 (column 5)
        assert_eq!(m[3][5], 10.0);
    }

    #[test]
    fn true_cost_examples() {
        let r = rule();
        let p = default_payload(Variant::TrueCostCurve, 0, &r).unwrap();
        let s = &p.series.as_ref().unwrap()[0];
        let bids = &p.axes.bid.samples;
        assert_eq!(s.values[35], 0.0);
        let peak = argmax(bids, &s.values);
        let br = crate::auction::best_response(
            &r,
            Cost::new(85.0).unwrap(),
            &crate::auction::BidGrid::fine(),
            crate::auction::RiskParam::NEUTRAL,
        )
        .unwrap();
        assert!((peak - br).abs() <= 1.0);
        let curves = default_payload(Variant::Curves, 0, &r).unwrap().series.unwrap();
        let p75 = argmax(bids, &curves[1].values);
        let p100 = argmax(bids, &curves[2].values);
        assert!(p75 <= peak && peak <= p100);
    }

    #[test]
    fn rejects_unsorted_samples() {
        assert!(allocation_curve(0, &rule(), &[60.0, 50.0]).is_err());
        assert!(utility_curves(0, &rule(), &[75.0, 50.0], &[50.0, 60.0]).is_err());
    }

    #[test]
    fn variant_names() {
        for v in [Variant::Allocation, Variant::Curves, Variant::Heatmap, Variant::TrueCostCurve] {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.as_str()));
        }
    }
}
