//! Best-response inversion: the cost whose optimal bid is nearest the
//! observed bid.

use serde::{Deserialize, Serialize};

use crate::auction::{AllocationRule, BidGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeSide {
    /// Bid below the best response of the lowest cost on the grid.
    Below,
    /// Bid above the best response of the highest cost on the grid.
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub cost: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub out_of_range: Option<RangeSide>,
}

/// Risk-neutral best response for every cost of a cost grid.
///
/// Entries are nondecreasing in cost (the allocation rule is monotone), which
/// makes a single forward sweep enough to fill the table: the search for cost
/// `k` starts at the optimum of cost `k − 1` and stops once the utility, which
/// is strictly quasi-concave above cost for a normal opponent, starts to fall.
#[derive(Debug, Clone)]
pub struct BestResponseTable {
    cost_grid: BidGrid,
    bid_grid: BidGrid,
    responses: Vec<f64>,
}

impl BestResponseTable {
    pub fn new(rule: &AllocationRule, cost_grid: &BidGrid, bid_grid: &BidGrid) -> Result<Self> {
        if cost_grid.lo() < bid_grid.lo() || cost_grid.hi() > bid_grid.hi() {
            return Err(Error::config("cost grid must lie within the bid grid"));
        }
        let probs = rule.win_table(bid_grid);
        let mut responses = Vec::with_capacity(cost_grid.len());
        let mut floor = 0;
        for k in 0..cost_grid.len() {
            let c = cost_grid.bid(k);
            let start = bid_grid.first_at_or_above(c).max(floor);
            let mut best = (start, f64::NEG_INFINITY);
            for i in start..bid_grid.len() {
                let u = (bid_grid.bid(i) - c) * probs[i];
                if u > best.1 {
                    best = (i, u);
                } else if u < best.1 {
                    break;
                }
            }
            floor = best.0;
            responses.push(bid_grid.bid(best.0));
        }
        Ok(BestResponseTable { cost_grid: *cost_grid, bid_grid: *bid_grid, responses })
    }

    /// Fine cost and bid grids over `[0, 200]` at 0.01.
    pub fn fine(rule: &AllocationRule) -> Self {
        BestResponseTable::new(rule, &BidGrid::fine(), &BidGrid::fine()).expect("fine grids are compatible")
    }

    pub fn cost_grid(&self) -> &BidGrid {
        &self.cost_grid
    }

    pub fn bid_grid(&self) -> &BidGrid {
        &self.bid_grid
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Cost whose best response is nearest to `bid`; equally near candidates
    /// resolve to the lower cost.
    pub fn invert(&self, bid: f64) -> Result<Inversion> {
        if !bid.is_finite() {
            return Err(Error::domain(format!("bid must be finite, got {bid}")));
        }
        let r = &self.responses;
        let k = r.partition_point(|&v| v < bid);
        let (value, out_of_range) = if k == 0 {
            (r[0], (bid < r[0]).then_some(RangeSide::Below))
        } else if k == r.len() {
            let last = r[r.len() - 1];
            (last, (bid > last).then_some(RangeSide::Above))
        } else if bid - r[k - 1] <= r[k] - bid {
            (r[k - 1], None)
        } else {
            (r[k], None)
        };
        let idx = r.partition_point(|&v| v < value);
        Ok(Inversion { cost: self.cost_grid.bid(idx), out_of_range })
    }
}

/// One-shot inversion; builds the full table for `rule`.
pub fn invert_best_response(
    rule: &AllocationRule,
    bid: f64,
    cost_grid: &BidGrid,
    bid_grid: &BidGrid,
) -> Result<Inversion> {
    BestResponseTable::new(rule, cost_grid, bid_grid)?.invert(bid)
}
