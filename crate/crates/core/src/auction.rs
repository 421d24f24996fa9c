//! Numerical primitives of the single-item reverse first-price auction.
//!
//! The participant (a seller with private cost `c`) and a computer opponent
//! both bid; the opponent's bid is `x ~ N(mu, sigma^2)`. The lowest bid wins
//! and is paid its own bid, so a bid `b` wins with probability
//! `P(x > b) = 1 − Φ((b − mu) / sigma)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::normal;
use crate::{Error, Result};

/// Opponent bid distribution, which induces the allocation rule
/// `Pr(win | bid)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleRepr")]
pub struct AllocationRule {
    mu: f64,
    sigma: f64,
}

#[derive(Deserialize)]
struct RuleRepr {
    mu: f64,
    sigma: f64,
}

impl TryFrom<RuleRepr> for AllocationRule {
    type Error = Error;

    fn try_from(r: RuleRepr) -> Result<Self> {
        AllocationRule::new(r.mu, r.sigma)
    }
}

impl AllocationRule {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::domain(format!("opponent mean must be finite, got {mu}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::domain(format!("opponent sigma must be positive, got {sigma}")));
        }
        Ok(AllocationRule { mu, sigma })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Probability that `bid` beats the opponent.
    pub fn win_probability(&self, bid: f64) -> Result<f64> {
        if !bid.is_finite() {
            return Err(Error::domain(format!("bid must be finite, got {bid}")));
        }
        Ok(self.win_prob(bid))
    }

    #[inline]
    pub(crate) fn win_prob(&self, bid: f64) -> f64 {
        normal::sf((bid - self.mu) / self.sigma)
    }

    /// Win probabilities for every bid of `grid`.
    pub fn win_table(&self, grid: &BidGrid) -> Vec<f64> {
        grid.iter().map(|b| self.win_prob(b)).collect()
    }
}

/// Discretized set of feasible bids `{lo, lo + step, ..., hi}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr")]
pub struct BidGrid {
    lo: f64,
    hi: f64,
    step: f64,
    #[serde(skip_serializing)]
    len: usize,
}

#[derive(Deserialize)]
struct GridRepr {
    lo: f64,
    hi: f64,
    step: f64,
}

impl TryFrom<GridRepr> for BidGrid {
    type Error = Error;

    fn try_from(g: GridRepr) -> Result<Self> {
        BidGrid::new(g.lo, g.hi, g.step)
    }
}

/// Grid values are snapped to this resolution so that e.g. `0.01 * 7`
/// prints as `0.07`.
const GRID_SNAP: f64 = 1e9;

impl BidGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
            return Err(Error::config("bid grid bounds must be finite"));
        }
        if lo >= hi || step <= 0.0 {
            return Err(Error::config(format!(
                "bid grid needs lo < hi and step > 0, got [{lo}, {hi}] step {step}"
            )));
        }
        let intervals = (hi - lo) / step;
        let whole = intervals.round();
        if (intervals - whole).abs() > 1e-6 {
            return Err(Error::config(format!(
                "({hi} - {lo}) / {step} is not a whole number of steps"
            )));
        }
        Ok(BidGrid { lo, hi, step, len: whole as usize + 1 })
    }

    /// `[0, 200]` AC at 0.01, used for optimization and inversion.
    pub fn fine() -> Self {
        BidGrid::new(0.0, 200.0, 0.01).expect("valid grid")
    }

    /// `[0, 200]` AC at 1, the quantal choice set.
    pub fn coarse() -> Self {
        BidGrid::new(0.0, 200.0, 1.0).expect("valid grid")
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn bid(&self, i: usize) -> f64 {
        debug_assert!(i < self.len);
        ((self.lo + i as f64 * self.step) * GRID_SNAP).round() / GRID_SNAP
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.bid(i))
    }

    /// Index of the grid bid nearest to `value` (clamped to the grid).
    pub fn nearest_index(&self, value: f64) -> usize {
        let pos = ((value - self.lo) / self.step).round();
        if pos <= 0.0 {
            0
        } else {
            (pos as usize).min(self.len - 1)
        }
    }

    /// Index of the first grid bid `>= value`, or `len()` if none.
    pub fn first_at_or_above(&self, value: f64) -> usize {
        let guess = ((value - self.lo) / self.step).floor().max(0.0) as usize;
        let mut i = guess.min(self.len);
        while i > 0 && self.bid(i - 1) >= value {
            i -= 1;
        }
        while i < self.len && self.bid(i) < value {
            i += 1;
        }
        i
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lo && value <= self.hi
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.lo, self.hi)
    }
}

/// A seller's private cost in AC.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Cost(f64);

impl Cost {
    pub fn new(value: f64) -> Result<Self> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::domain(format!("cost must be finite and >= 0, got {value}")));
        }
        Ok(Cost(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Cost {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Cost::new(v)
    }
}

impl From<Cost> for f64 {
    fn from(c: Cost) -> f64 {
        c.0
    }
}

/// Arrow–Pratt relative risk aversion coefficient, restricted to `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RiskParam(f64);

impl RiskParam {
    pub const NEUTRAL: RiskParam = RiskParam(0.0);

    pub fn new(r: f64) -> Result<Self> {
        if !(r.is_finite() && (0.0..1.0).contains(&r)) {
            return Err(Error::domain(format!("risk coefficient must lie in [0, 1), got {r}")));
        }
        Ok(RiskParam(r))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_neutral(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for RiskParam {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        RiskParam::new(v)
    }
}

impl From<RiskParam> for f64 {
    fn from(r: RiskParam) -> f64 {
        r.0
    }
}

/// How a trial's payoff is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffMode {
    /// The opponent bid is sampled; the winner is paid its bid.
    Stochastic,
    /// The payoff is the expected utility of the bid, paid with certainty.
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// Absent in deterministic mode.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub won: Option<bool>,
    pub payoff: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub opponent_bid: Option<f64>,
}

/// Risk-neutral expected utility `(bid − cost) · Pr(win | bid)`.
///
/// Negative whenever the bid is below cost.
pub fn expected_utility(rule: &AllocationRule, cost: Cost, bid: f64) -> f64 {
    (bid - cost.0) * rule.win_prob(bid)
}

/// CRRA expected utility `((bid − cost)^(1−r) / (1−r)) · Pr(win | bid)`.
///
/// With `r = 0` this is exactly [`expected_utility`] (including negative
/// margins). For `r > 0` the margin power is undefined below cost and the
/// result is `−∞`, which keeps such bids out of every argmax and gives them
/// zero quantal probability.
pub fn crra_expected_utility(rule: &AllocationRule, cost: Cost, bid: f64, risk: RiskParam) -> f64 {
    crra_utility_from_prob(bid - cost.0, rule.win_prob(bid), risk.0)
}

#[inline]
pub(crate) fn crra_utility_from_prob(margin: f64, win_prob: f64, r: f64) -> f64 {
    if r == 0.0 {
        margin * win_prob
    } else if margin < 0.0 {
        f64::NEG_INFINITY
    } else {
        let k = 1.0 - r;
        margin.powf(k) / k * win_prob
    }
}

/// Grid argmax of utilities for bids at index `start..`, lowest index on ties.
pub(crate) fn argmax_from(utilities: impl Iterator<Item = f64>, start: usize) -> (usize, f64) {
    let mut best = (start, f64::NEG_INFINITY);
    for (k, u) in utilities.enumerate() {
        if u > best.1 {
            best = (start + k, u);
        }
    }
    best
}

fn check_covers(grid: &BidGrid, cost: Cost) -> Result<()> {
    if !grid.contains(cost.0) {
        return Err(Error::config(format!(
            "bid grid [{}, {}] does not cover cost {}",
            grid.lo(),
            grid.hi(),
            cost.0
        )));
    }
    Ok(())
}

/// Grid bid maximizing (CRRA) expected utility; the lowest maximizer wins ties.
///
/// Bids below cost never win the argmax: for `r = 0` their utility is
/// negative while bidding the cost itself yields zero, and for `r > 0` they are
/// outside the utility's domain.
pub fn best_response(rule: &AllocationRule, cost: Cost, grid: &BidGrid, risk: RiskParam) -> Result<f64> {
    best_response_with_utility(rule, cost, grid, risk).map(|(b, _)| b)
}

/// [`best_response`] together with its utility.
pub fn best_response_with_utility(
    rule: &AllocationRule,
    cost: Cost,
    grid: &BidGrid,
    risk: RiskParam,
) -> Result<(f64, f64)> {
    check_covers(grid, cost)?;
    let start = grid.first_at_or_above(cost.0);
    let (idx, u) = argmax_from(
        (start..grid.len()).map(|i| crra_expected_utility(rule, cost, grid.bid(i), risk)),
        start,
    );
    Ok((grid.bid(idx), u))
}

/// Result of scoring a bid against the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioScore {
    /// `clamp(π_bid / π_OPT, 0, 1)`.
    pub ratio: f64,
    /// The bid's expected utility was negative (clamped to 0).
    pub negative_utility: bool,
}

/// Bid optimization ratio: expected utility of `bid` over the expected
/// utility of the risk-neutral best response.
pub fn bid_optimization_ratio(
    rule: &AllocationRule,
    cost: Cost,
    bid: f64,
    grid: &BidGrid,
) -> Result<RatioScore> {
    let (_, optimum) = best_response_with_utility(rule, cost, grid, RiskParam::NEUTRAL)?;
    ratio_against(rule, cost, bid, optimum)
}

/// Ratio against a precomputed optimal utility.
pub fn ratio_against(rule: &AllocationRule, cost: Cost, bid: f64, optimum: f64) -> Result<RatioScore> {
    if !bid.is_finite() {
        return Err(Error::domain(format!("bid must be finite, got {bid}")));
    }
    if !(optimum > 0.0) {
        return Err(Error::DegenerateStimulus(format!(
            "optimal expected utility {optimum} is not positive"
        )));
    }
    let utility = expected_utility(rule, cost, bid);
    Ok(RatioScore {
        ratio: (utility / optimum).clamp(0.0, 1.0),
        negative_utility: utility < 0.0,
    })
}

/// Resolve one auction round.
///
/// Stochastic: draw the opponent bid, win iff `bid < x` (an exact tie loses).
/// Deterministic: pay the expected utility; no draw is made and the random
/// stream is left untouched.
pub fn realize_outcome<R: Rng + ?Sized>(
    rule: &AllocationRule,
    cost: Cost,
    bid: f64,
    mode: PayoffMode,
    rng: &mut R,
) -> Outcome {
    match mode {
        PayoffMode::Deterministic => Outcome {
            won: None,
            payoff: expected_utility(rule, cost, bid),
            opponent_bid: None,
        },
        PayoffMode::Stochastic => {
            let z: f64 = rng.sample(StandardNormal);
            let x = rule.mu + rule.sigma * z;
            let won = bid < x;
            Outcome {
                won: Some(won),
                payoff: if won { bid - cost.0 } else { 0.0 },
                opponent_bid: Some(x),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rule() -> AllocationRule {
        AllocationRule::new(100.0, 15.0).unwrap()
    }

    fn c(v: f64) -> Cost {
        Cost::new(v).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(AllocationRule::new(100.0, 0.0).is_err());
        assert!(AllocationRule::new(f64::NAN, 1.0).is_err());
        assert!(rule().win_probability(f64::INFINITY).is_err());
        assert!(Cost::new(-1.0).is_err());
        assert!(RiskParam::new(1.0).is_err());
        assert!(RiskParam::new(-0.1).is_err());
        assert!(BidGrid::new(0.0, 1.0, 0.3).is_err());
        assert!(BidGrid::new(1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn grid_enumeration() {
        let g = BidGrid::fine();
        assert_eq!(g.len(), 20001);
        assert_eq!(g.bid(7), 0.07);
        assert_eq!(g.bid(10200), 102.0);
        assert_eq!(g.bid(20000), 200.0);
        assert_eq!(g.nearest_index(101.996), 10200);
        assert_eq!(g.first_at_or_above(85.0), 8500);
        assert_eq!(g.first_at_or_above(85.001), 8501);
        assert_eq!(g.first_at_or_above(300.0), g.len());
        let coarse = BidGrid::coarse();
        let v: Vec<f64> = coarse.iter().collect();
        assert_eq!(v.len(), 201);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn win_probability_examples() {
        let r = rule();
        assert_eq!(r.win_probability(100.0).unwrap(), 0.5);
        // 1 − Φ(1)
        assert!((r.win_probability(115.0).unwrap() - 0.158_655_253_931_457_05).abs() < 1e-12);
        assert!(r.win_probability(40.0).unwrap() >= 0.9999);
    }

    #[test]
    fn expected_utility_examples() {
        let r = rule();
        assert_eq!(expected_utility(&r, c(85.0), 100.0), 7.5);
        assert_eq!(expected_utility(&r, c(85.0), 85.0), 0.0);
        assert!((expected_utility(&r, c(85.0), 115.0) - 4.759_657_617_943_711_5).abs() < 1e-10);
        assert!(expected_utility(&r, c(85.0), 80.0) < 0.0);
    }

    #[test]
    fn crra_examples() {
        let r = rule();
        // margin 16 at the mean: sqrt(16) / 0.5 * 0.5
        let half = RiskParam::new(0.5).unwrap();
        assert_eq!(crra_expected_utility(&r, c(84.0), 100.0, half), 4.0);
        for &b in &[60.0, 85.0, 101.3, 140.0] {
            assert_eq!(
                crra_expected_utility(&r, c(85.0), b, RiskParam::NEUTRAL),
                expected_utility(&r, c(85.0), b)
            );
        }
        assert_eq!(crra_expected_utility(&r, c(85.0), 85.0, half), 0.0);
        assert_eq!(crra_expected_utility(&r, c(85.0), 84.0, half), f64::NEG_INFINITY);
    }

    #[test]
    fn crra_converges_to_neutral_as_r_vanishes() {
        let r = rule();
        let tiny = RiskParam::new(1e-8).unwrap();
        for &b in &[85.5, 95.0, 102.0, 130.0] {
            let a = crra_expected_utility(&r, c(85.0), b, tiny);
            let e = expected_utility(&r, c(85.0), b);
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn best_response_examples() {
        let r = rule();
        let grid = BidGrid::fine();
        let br = best_response(&r, c(85.0), &grid, RiskParam::NEUTRAL).unwrap();
        // Exhaustive scan over all 20001 bids (including those below cost).
        let (idx, _) = argmax_from(grid.iter().map(|b| expected_utility(&r, c(85.0), b)), 0);
        assert_eq!(br, grid.bid(idx));
        assert!((br - 102.0).abs() <= 0.05, "{br}");
        assert_eq!(br, 101.98);

        let averse = best_response(&r, c(85.0), &grid, RiskParam::new(0.5).unwrap()).unwrap();
        assert!(averse <= br);

        let (b, u) = best_response_with_utility(&r, c(200.0), &grid, RiskParam::NEUTRAL).unwrap();
        assert_eq!((b, u), (200.0, 0.0));

        assert!(matches!(
            best_response(&r, c(250.0), &grid, RiskParam::NEUTRAL),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ratio_examples() {
        let r = rule();
        let grid = BidGrid::fine();
        let br = best_response(&r, c(85.0), &grid, RiskParam::NEUTRAL).unwrap();
        assert_eq!(bid_optimization_ratio(&r, c(85.0), br, &grid).unwrap().ratio, 1.0);
        assert_eq!(bid_optimization_ratio(&r, c(85.0), 85.0, &grid).unwrap().ratio, 0.0);
        let mid = bid_optimization_ratio(&r, c(85.0), 95.0, &grid).unwrap();
        let (_, opt) = best_response_with_utility(&r, c(85.0), &grid, RiskParam::NEUTRAL).unwrap();
        assert!(mid.ratio > 0.0 && mid.ratio < 1.0);
        assert_eq!(mid.ratio, expected_utility(&r, c(85.0), 95.0) / opt);
        let low = bid_optimization_ratio(&r, c(85.0), 70.0, &grid).unwrap();
        assert_eq!(low.ratio, 0.0);
        assert!(low.negative_utility);
        assert!(matches!(
            ratio_against(&r, c(85.0), 90.0, 0.0),
            Err(Error::DegenerateStimulus(_))
        ));
    }

    #[test]
    fn deterministic_outcome_pays_expected_utility() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = realize_outcome(&rule(), c(85.0), 100.0, PayoffMode::Deterministic, &mut rng);
        assert_eq!(o, Outcome { won: None, payoff: 7.5, opponent_bid: None });
    }

    #[test]
    fn stochastic_outcome_far_above_opponent_loses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let o = realize_outcome(&rule(), c(85.0), 100.0 + 6.5 * 15.0, PayoffMode::Stochastic, &mut rng);
            assert_eq!(o.won, Some(false));
            assert_eq!(o.payoff, 0.0);
        }
    }

    #[test]
    fn stochastic_win_frequency_matches_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let wins = (0..n)
            .filter(|_| {
                realize_outcome(&rule(), c(85.0), 100.0, PayoffMode::Stochastic, &mut rng).won == Some(true)
            })
            .count();
        let freq = wins as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.002, "{freq}");
    }
}
