//! The broker side of the auction.
//!
//! Everything here works from bids and public quantities only: consistency
//! prices, the step size, the stopping tolerance and the rate box. Private
//! agent information never reaches this module; bids come in through
//! [`BidProvider`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{PairMatrix, PriceMatrix, RateMatrix};

/// Smallest admissible PoI bid, and the smallest price the broker announces.
pub const P_FLOOR: f64 = 1e-9;
/// Largest PoI bid. A PoI that wants to sell (almost) nothing bids up to here.
pub const P_CAP: f64 = 1e12;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 1e-4;
pub const DEFAULT_MAX_ITERS: usize = 5000;

/// Platform bids `s` and PoI bids `p`, one per (PoI, platform) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidSet {
    pub platform_bids: PairMatrix,
    pub poi_bids: PairMatrix,
}

/// Source of bids for a given announcement of consistency prices.
pub trait BidProvider {
    fn bids(&mut self, prices: &PriceMatrix) -> Result<BidSet>;
}

impl<F> BidProvider for F
where
    F: FnMut(&PriceMatrix) -> Result<BidSet>,
{
    fn bids(&mut self, prices: &PriceMatrix) -> Result<BidSet> {
        self(prices)
    }
}

/// Allocation rule: `x = s / lambda`, `y = lambda / p`, each projected onto
/// `[floor, ceiling]`.
pub fn allocate(
    bids: &BidSet,
    prices: &PriceMatrix,
    floor: f64,
    ceiling: f64,
) -> Result<(RateMatrix, RateMatrix)> {
    let (pois, platforms) = (prices.pois(), prices.platforms());
    if !bids.platform_bids.same_shape(prices) || !bids.poi_bids.same_shape(prices) {
        return Err(Error::invalid("bid and price shapes differ"));
    }
    let mut x = PairMatrix::zeros(pois, platforms);
    let mut y = PairMatrix::zeros(pois, platforms);
    for i in 0..pois {
        for n in 0..platforms {
            let lambda = prices.get(i, n);
            if lambda <= 0.0 {
                return Err(Error::ZeroPrice {
                    poi: i,
                    platform: n,
                });
            }
            let s = bids.platform_bids.get(i, n);
            let p = bids.poi_bids.get(i, n);
            if !(s >= 0.0) || !(p >= P_FLOOR) {
                return Err(Error::invalid(format!(
                    "bid out of range at ({i}, {n}): s = {s}, p = {p}"
                )));
            }
            x.set(i, n, (s / lambda).clamp(floor, ceiling));
            y.set(i, n, (lambda / p).clamp(floor, ceiling));
        }
    }
    Ok((x.into(), y.into()))
}

/// Pricing function for one platform: the sum of its bids.
pub fn platform_payment(platform_bids: &[f64]) -> f64 {
    platform_bids.iter().sum()
}

/// Reimbursement for one PoI: `sum_n lambda^2 / p`.
pub fn poi_reimbursement(poi_bids: &[f64], prices: &[f64]) -> f64 {
    poi_bids
        .iter()
        .zip(prices)
        .map(|(p, l)| l * l / p)
        .sum()
}

/// Bids that make the allocation rule return exactly `(x_hat, y_hat)`.
pub fn truthful_bids(x_hat: &RateMatrix, y_hat: &RateMatrix, prices: &PriceMatrix) -> BidSet {
    let (pois, platforms) = (prices.pois(), prices.platforms());
    let s = PairMatrix::from_fn(pois, platforms, |i, n| prices.get(i, n) * x_hat.get(i, n));
    let p = PairMatrix::from_fn(pois, platforms, |i, n| {
        (prices.get(i, n) / y_hat.get(i, n)).clamp(P_FLOOR, P_CAP)
    });
    BidSet {
        platform_bids: s,
        poi_bids: p,
    }
}

/// Projected price step: `lambda' = max(0, lambda + epsilon (x - y))`.
pub fn update_prices(prices: &PriceMatrix, x: &RateMatrix, y: &RateMatrix, epsilon: f64) -> PriceMatrix {
    let mut next = prices.clone();
    for ((l, xv), yv) in next
        .as_mut_slice()
        .iter_mut()
        .zip(x.as_slice())
        .zip(y.as_slice())
    {
        *l = (*l + epsilon * (xv - yv)).max(0.0);
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    #[default]
    Constant,
    /// `epsilon / sqrt(k)` at iteration `k`.
    Diminishing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuctionParams {
    pub epsilon: f64,
    pub gamma: f64,
    pub max_iters: usize,
    pub step_rule: StepRule,
    pub rate_floor: f64,
    pub rate_ceiling: f64,
    /// Keep every iterate, not only the tail kept for error reports.
    pub record_trace: bool,
}

impl Default for AuctionParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            gamma: DEFAULT_GAMMA,
            max_iters: DEFAULT_MAX_ITERS,
            step_rule: StepRule::Constant,
            rate_floor: crate::age::RATE_FLOOR,
            rate_ceiling: crate::age::RATE_CEILING,
            record_trace: false,
        }
    }
}

impl AuctionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.gamma > 0.0 && self.max_iters > 0) {
            return Err(Error::invalid(format!(
                "auction needs epsilon > 0, gamma > 0, max_iters > 0 (got {}, {}, {})",
                self.epsilon, self.gamma, self.max_iters
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub prices: PriceMatrix,
    pub x: RateMatrix,
    pub y: RateMatrix,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub x: RateMatrix,
    pub y: RateMatrix,
    /// Prices announced in the final round; the final bids respond to these.
    pub prices: PriceMatrix,
    pub bids: BidSet,
    pub platform_payments: Vec<f64>,
    pub poi_reimbursements: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// max |x - y|
    pub residual: f64,
    pub trace: Vec<IterationRecord>,
}

impl AuctionOutcome {
    /// Total platform payments minus total PoI reimbursements.
    pub fn broker_budget(&self) -> f64 {
        self.platform_payments.iter().sum::<f64>() - self.poi_reimbursements.iter().sum::<f64>()
    }
}

const ERROR_TRACE_LEN: usize = 20;

/// Runs announce / bid / allocate / update rounds until `max |x - y| <= gamma`.
pub fn run_broker(
    provider: &mut impl BidProvider,
    initial_prices: &PriceMatrix,
    params: &AuctionParams,
) -> Result<AuctionOutcome> {
    params.validate()?;
    if initial_prices.as_slice().iter().any(|l| !(*l >= P_FLOOR)) {
        return Err(Error::invalid(format!(
            "initial prices must be at least {P_FLOOR}"
        )));
    }
    let mut lambda = initial_prices.clone();
    let mut trace = Vec::new();
    let mut last_residual = f64::INFINITY;

    for k in 1..=params.max_iters {
        let mut announced = lambda.clone();
        announced
            .as_mut_slice()
            .iter_mut()
            .for_each(|l| *l = l.max(P_FLOOR));

        let bids = provider.bids(&announced)?;
        let (x, y) = allocate(&bids, &announced, params.rate_floor, params.rate_ceiling)?;
        let residual = x.max_abs_diff(&y);
        last_residual = residual;

        if params.record_trace || k + ERROR_TRACE_LEN > params.max_iters {
            trace.push(IterationRecord {
                k,
                prices: announced.clone(),
                x: x.clone(),
                y: y.clone(),
                residual,
            });
        }

        if residual <= params.gamma {
            let platform_payments = (0..announced.platforms())
                .map(|n| platform_payment(&bids.platform_bids.column(n)))
                .collect();
            let poi_reimbursements = (0..announced.pois())
                .map(|i| poi_reimbursement(bids.poi_bids.row(i), announced.row(i)))
                .collect();
            return Ok(AuctionOutcome {
                x,
                y,
                prices: announced,
                bids,
                platform_payments,
                poi_reimbursements,
                iterations: k,
                converged: true,
                residual,
                trace,
            });
        }

        let step = match params.step_rule {
            StepRule::Constant => params.epsilon,
            StepRule::Diminishing => params.epsilon / (k as f64).sqrt(),
        };
        lambda = update_prices(&lambda, &x, &y, step);
    }

    Err(Error::AuctionNonConvergence {
        iterations: params.max_iters,
        residual: last_residual,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn one(v: f64) -> PairMatrix {
        PairMatrix::filled(1, 1, v)
    }

    fn bids(s: f64, p: f64) -> BidSet {
        BidSet {
            platform_bids: one(s),
            poi_bids: one(p),
        }
    }

    #[test]
    fn allocation_rule_arithmetic() {
        let prices = PriceMatrix(one(2.0));
        let (x, y) = allocate(&bids(0.6, 4.0), &prices, 1e-4, 1.0).unwrap();
        assert!((x.get(0, 0) - 0.3).abs() < 1e-15);
        assert!((y.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn allocation_clips_to_the_box() {
        let prices = PriceMatrix(one(2.0));
        let (x, _) = allocate(&bids(5.0, 4.0), &prices, 1e-4, 1.0).unwrap();
        assert_eq!(x.get(0, 0), 1.0);
    }

    #[test]
    fn allocation_rejects_zero_price() {
        let prices = PriceMatrix(one(0.0));
        assert!(matches!(
            allocate(&bids(1.0, 1.0), &prices, 1e-4, 1.0),
            Err(Error::ZeroPrice { .. })
        ));
    }

    #[test]
    fn payments() {
        assert_eq!(platform_payment(&[0.3, 0.7]), 1.0);
        assert_eq!(platform_payment(&[0.0, 0.0]), 0.0);
        assert_eq!(poi_reimbursement(&[4.0], &[2.0]), 1.0);
        assert_eq!(poi_reimbursement(&[4.0], &[0.0]), 0.0);
    }

    #[test]
    fn payments_equal_price_times_rate_without_clipping() {
        let prices = PriceMatrix(PairMatrix::from_rows(&[vec![1.5, 0.7], vec![2.0, 0.9]]).unwrap());
        let b = BidSet {
            platform_bids: PairMatrix::from_rows(&[vec![0.3, 0.2], vec![0.5, 0.4]]).unwrap(),
            poi_bids: PairMatrix::from_rows(&[vec![3.0, 2.0], vec![4.0, 1.5]]).unwrap(),
        };
        let (x, y) = allocate(&b, &prices, 1e-4, 1.0).unwrap();
        for n in 0..2 {
            let via_rate: f64 = (0..2).map(|i| prices.get(i, n) * x.get(i, n)).sum();
            assert!((platform_payment(&b.platform_bids.column(n)) - via_rate).abs() < 1e-14);
        }
        for i in 0..2 {
            let via_rate: f64 = (0..2).map(|n| prices.get(i, n) * y.get(i, n)).sum();
            assert!((poi_reimbursement(b.poi_bids.row(i), prices.row(i)) - via_rate).abs() < 1e-14);
        }
    }

    #[test]
    fn price_update_examples() {
        let up = update_prices(&PriceMatrix(one(0.5)), &RateMatrix(one(0.3)), &RateMatrix(one(0.2)), 0.1);
        assert!((up.get(0, 0) - 0.51).abs() < 1e-15);
        let clamped = update_prices(&PriceMatrix(one(0.05)), &RateMatrix(one(0.0)), &RateMatrix(one(1.0)), 0.1);
        assert_eq!(clamped.get(0, 0), 0.0);
        let fixed = update_prices(&PriceMatrix(one(0.7)), &RateMatrix(one(0.4)), &RateMatrix(one(0.4)), 0.1);
        assert_eq!(fixed.get(0, 0), 0.7);
    }

    #[test]
    fn truthful_bids_round_trip_through_allocation() {
        let prices = PriceMatrix(PairMatrix::from_rows(&[vec![1.3, 0.2], vec![0.01, 7.0]]).unwrap());
        let xh = RateMatrix(PairMatrix::from_rows(&[vec![0.25, 0.9], vec![0.5, 1e-3]]).unwrap());
        let yh = RateMatrix(PairMatrix::from_rows(&[vec![0.3, 0.05], vec![0.75, 0.6]]).unwrap());
        let b = truthful_bids(&xh, &yh, &prices);
        let (x, y) = allocate(&b, &prices, 1e-4, 1.0).unwrap();
        assert!(x.max_abs_diff(&xh) < 1e-15);
        assert!(y.max_abs_diff(&yh) < 1e-15);
    }

    /// A market with linear supply and demand per pair, visible only
    /// through its bids: demand x = a - lambda, supply y = lambda / c.
    #[test]
    fn broker_converges_against_an_opaque_bid_provider() {
        let mut provider = |prices: &PriceMatrix| -> Result<BidSet> {
            let xh = PairMatrix::from_fn(1, 2, |_, n| (0.8 + 0.1 * n as f64 - prices.get(0, n)).clamp(1e-4, 1.0));
            let yh = PairMatrix::from_fn(1, 2, |_, n| (prices.get(0, n) / 2.0).clamp(1e-4, 1.0));
            Ok(truthful_bids(&xh.into(), &yh.into(), prices))
        };
        let params = AuctionParams {
            epsilon: 0.5,
            record_trace: true,
            ..AuctionParams::default()
        };
        let out = run_broker(&mut provider, &PriceMatrix(PairMatrix::filled(1, 2, 1.0)), &params).unwrap();
        assert!(out.converged && out.residual <= params.gamma);
        // a - lambda = lambda / 2  =>  lambda = 2a / 3
        assert!((out.prices.get(0, 0) - 2.0 * 0.8 / 3.0).abs() < 1e-3);
        assert!((out.prices.get(0, 1) - 2.0 * 0.9 / 3.0).abs() < 1e-3);
        assert_eq!(out.trace.len(), out.iterations);
        let bound = out.prices.sum() * params.gamma;
        assert!(out.broker_budget().abs() <= bound);
    }

    #[test]
    fn loose_tolerance_stops_after_one_round() {
        let mut provider = |prices: &PriceMatrix| -> Result<BidSet> {
            let xh = PairMatrix::filled(1, 1, 0.9);
            let yh = PairMatrix::filled(1, 1, 0.1);
            Ok(truthful_bids(&xh.into(), &yh.into(), prices))
        };
        let params = AuctionParams {
            gamma: 10.0,
            ..AuctionParams::default()
        };
        let out = run_broker(&mut provider, &PriceMatrix(one(1.0)), &params).unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn non_convergence_carries_residual_and_trace() {
        let mut provider = |prices: &PriceMatrix| -> Result<BidSet> {
            let xh = PairMatrix::filled(1, 1, 1.0);
            let yh = PairMatrix::filled(1, 1, 1e-4);
            Ok(truthful_bids(&xh.into(), &yh.into(), prices))
        };
        let params = AuctionParams {
            max_iters: 30,
            ..AuctionParams::default()
        };
        match run_broker(&mut provider, &PriceMatrix(one(1.0)), &params) {
            Err(Error::AuctionNonConvergence { iterations, residual, trace }) => {
                assert_eq!(iterations, 30);
                assert!(residual > 0.9);
                assert!(!trace.is_empty() && trace.last().unwrap().k == 30);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn broker_source_never_names_private_agent_data() {
        let src = include_str!("broker.rs");
        let code = src.split("#[cfg(test)]").next().unwrap();
        for forbidden in ["RandomFactors", "MarketScenario", "AgeModel", "valuation", "serving_rate", "crate::market"] {
            assert!(!code.contains(forbidden), "broker references {forbidden}");
        }
    }

    fn pair_grid() -> impl Strategy<Value = (usize, usize)> {
        (1usize..4, 1usize..4)
    }

    fn entries(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(lo..hi, len)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn updated_prices_are_nonnegative(
            (prices, x, y) in pair_grid().prop_flat_map(|(i, n)| {
                (entries(i * n, 0.0, 5.0), entries(i * n, 0.0, 1.0), entries(i * n, 0.0, 1.0))
                    .prop_map(move |(l, x, y)| (
                        PriceMatrix(PairMatrix::from_fn(i, n, |a, b| l[a * n + b])),
                        RateMatrix(PairMatrix::from_fn(i, n, |a, b| x[a * n + b])),
                        RateMatrix(PairMatrix::from_fn(i, n, |a, b| y[a * n + b])),
                    ))
            }),
            epsilon in 1e-3f64..2.0,
        ) {
            let next = update_prices(&prices, &x, &y, epsilon);
            prop_assert!(next.as_slice().iter().all(|l| *l >= 0.0));
            let fixed = update_prices(&prices, &x, &x, epsilon);
            prop_assert_eq!(fixed, prices);
        }

        #[test]
        fn truthful_bids_balance_the_budget_when_rates_match(
            (prices, rates) in pair_grid().prop_flat_map(|(i, n)| {
                (entries(i * n, 1e-3, 5.0), entries(i * n, 1e-3, 1.0)).prop_map(move |(l, r)| (
                    PriceMatrix(PairMatrix::from_fn(i, n, |a, b| l[a * n + b])),
                    RateMatrix(PairMatrix::from_fn(i, n, |a, b| r[a * n + b])),
                ))
            }),
        ) {
            let b = truthful_bids(&rates, &rates, &prices);
            let (x, y) = allocate(&b, &prices, 1e-4, 1.0).unwrap();
            let payments: f64 = (0..prices.platforms()).map(|n| platform_payment(&b.platform_bids.column(n))).sum();
            let refunds: f64 = (0..prices.pois()).map(|i| poi_reimbursement(b.poi_bids.row(i), prices.row(i))).sum();
            prop_assert!((payments - refunds).abs() <= 1e-12 * payments.max(1.0));
            prop_assert!(x.max_abs_diff(&rates) <= 1e-12);
            prop_assert!(y.max_abs_diff(&rates) <= 1e-12);
        }

        #[test]
        fn allocations_stay_in_the_box(
            s in 0.0f64..1e3,
            p in P_FLOOR..1e3,
            lambda in 1e-6f64..1e3,
        ) {
            let (x, y) = allocate(&bids(s, p), &PriceMatrix(one(lambda)), 1e-4, 1.0).unwrap();
            prop_assert!((1e-4..=1.0).contains(&x.get(0, 0)));
            prop_assert!((1e-4..=1.0).contains(&y.get(0, 0)));
        }
    }
}
