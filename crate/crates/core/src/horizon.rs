//! Multi-period market driver.
//!
//! Each period draws fresh factors, runs the auction with every platform's
//! age penalty weighted by its virtual backlog over `V`, and then grows the
//! backlogs by how far the realized ages overshoot their thresholds.

use serde::{Deserialize, Serialize};

use crate::age::AgeModel;
use crate::auction::{run_auction, AuctionOutcome, AuctionParams};
use crate::error::{Error, Result};
use crate::io::prices::PriceSeries;
use crate::market::{platform_utility, poi_cost, sample_factors, social_welfare, MarketScenario, RandomFactors};
use crate::matrix::{PairMatrix, PriceMatrix};

/// Virtual backlogs. The broker keeps `Q_n`, platform `n` keeps `q_n`; both
/// are updated from the same observed ages, so they never differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub broker_queues: Vec<f64>,
    pub platform_queues: Vec<f64>,
}

impl QueueState {
    pub fn empty(platforms: usize) -> Self {
        Self {
            broker_queues: vec![0.0; platforms],
            platform_queues: vec![0.0; platforms],
        }
    }

    pub fn is_coherent(&self) -> bool {
        self.broker_queues == self.platform_queues
    }
}

/// `Q' = max(0, Q + A - A_thr)`, applied to both copies.
pub fn queue_update(queues: &QueueState, ages: &[f64], thresholds: &[f64]) -> QueueState {
    let step = |q: &[f64]| -> Vec<f64> {
        q.iter()
            .zip(ages)
            .zip(thresholds)
            .map(|((q, a), thr)| (q + a - thr).max(0.0))
            .collect()
    };
    QueueState {
        broker_queues: step(&queues.broker_queues),
        platform_queues: step(&queues.platform_queues),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    /// 1-based period index.
    pub t: usize,
    pub welfare: f64,
    pub ages: Vec<f64>,
    /// `U_n - Pi_n`. The age penalty is not money and is left out.
    pub platform_payoffs: Vec<f64>,
    /// `Phi_i - C_i`
    pub poi_payoffs: Vec<f64>,
    /// `sum Pi - sum Phi`
    pub broker_budget: f64,
    /// Sum of the final announced prices.
    pub price_sum: f64,
    /// Backlogs after this period's update.
    pub queues: QueueState,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonParams {
    pub v: f64,
    pub auction: AuctionParams,
    /// Uniform price announced in the first round of period 1; later periods
    /// start from the previous period's final prices.
    pub initial_price: f64,
}

impl HorizonParams {
    pub fn new(v: f64) -> Self {
        Self {
            v,
            auction: AuctionParams::default(),
            initial_price: 1.0,
        }
    }
}

/// Everything one period produced, for callers that check per-period
/// properties beyond what [`PeriodRecord`] keeps.
pub struct PeriodView<'a> {
    pub record: &'a PeriodRecord,
    pub factors: &'a RandomFactors,
    /// Backlog over `V` each platform bid with.
    pub queue_over_v: &'a [f64],
    pub outcome: &'a AuctionOutcome,
    pub ages: &'a [AgeModel],
}

pub fn run_horizon(scenario: &MarketScenario, prices: &PriceSeries, params: &HorizonParams) -> Result<Vec<PeriodRecord>> {
    run_horizon_observed(scenario, prices, params, |_| Ok(()))
}

/// [`run_horizon`] calling `observer` after every period.
pub fn run_horizon_observed(
    scenario: &MarketScenario,
    prices: &PriceSeries,
    params: &HorizonParams,
    mut observer: impl FnMut(PeriodView<'_>) -> Result<()>,
) -> Result<Vec<PeriodRecord>> {
    scenario.validate()?;
    if !(params.v > 0.0 && params.v.is_finite()) {
        return Err(Error::invalid(format!("V must be positive, got {}", params.v)));
    }
    if !(params.initial_price > 0.0) {
        return Err(Error::invalid("initial price must be positive"));
    }
    let (pois, platforms) = (scenario.num_pois, scenario.num_platforms);
    let ages = scenario.age_models()?;
    let mut queues = QueueState::empty(platforms);
    let mut lambda = PriceMatrix(PairMatrix::filled(pois, platforms, params.initial_price));
    let mut records = Vec::with_capacity(scenario.horizon);

    for t in 1..=scenario.horizon {
        let factors = sample_factors(scenario, t - 1, prices);
        let queue_over_v: Vec<f64> = queues.platform_queues.iter().map(|q| q / params.v).collect();
        let outcome = run_auction(scenario, &ages, &factors, &queue_over_v, &lambda, &params.auction)
            .map_err(|e| e.in_period(t))?;

        let realized_ages = (0..platforms)
            .map(|n| ages[n].age(&outcome.x.column(n)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_period(t))?;
        let platform_payoffs = (0..platforms)
            .map(|n| platform_utility(&outcome.x.column(n), &factors, n, scenario.alpha) - outcome.platform_payments[n])
            .collect();
        let poi_payoffs = (0..pois)
            .map(|i| outcome.poi_reimbursements[i] - poi_cost(outcome.y.row(i), &factors, i))
            .collect();
        queues = queue_update(&queues, &realized_ages, &scenario.freshness_thresholds);

        let record = PeriodRecord {
            t,
            welfare: social_welfare(&outcome.x, &factors, scenario.alpha),
            ages: realized_ages,
            platform_payoffs,
            poi_payoffs,
            broker_budget: outcome.broker_budget(),
            price_sum: outcome.prices.sum(),
            queues: queues.clone(),
            iterations: outcome.iterations,
            residual: outcome.residual,
        };
        observer(PeriodView {
            record: &record,
            factors: &factors,
            queue_over_v: &queue_over_v,
            outcome: &outcome,
            ages: &ages,
        })
        .map_err(|e| e.in_period(t))?;
        lambda = outcome.prices;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub periods: usize,
    pub time_average_welfare: f64,
    /// Running-average age per period (outer) and platform (inner).
    pub running_average_ages: Vec<Vec<f64>>,
    pub final_average_ages: Vec<f64>,
    /// Per platform, the first period whose running-average age is at most
    /// the threshold.
    pub first_satisfied: Vec<Option<usize>>,
    /// First period at which every platform is satisfied at once.
    pub first_all_satisfied: Option<usize>,
    pub cumulative_platform_payoffs: Vec<f64>,
    pub cumulative_poi_payoffs: Vec<f64>,
    pub max_abs_budget: f64,
    pub mean_iterations: f64,
    pub max_iterations: usize,
}

pub fn aggregate_metrics(records: &[PeriodRecord], thresholds: &[f64]) -> Result<Summary> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("no period records to aggregate"))?;
    let platforms = first.ages.len();
    if thresholds.len() != platforms {
        return Err(Error::invalid("one threshold per platform required"));
    }
    let mut age_sums = vec![0.0; platforms];
    let mut running = Vec::with_capacity(records.len());
    let mut first_satisfied = vec![None; platforms];
    let mut first_all_satisfied = None;
    let mut platform_cum = vec![0.0; platforms];
    let mut poi_cum = vec![0.0; first.poi_payoffs.len()];
    let (mut welfare, mut max_abs_budget, mut iters, mut max_iters) = (0.0, 0.0f64, 0usize, 0usize);

    for (k, r) in records.iter().enumerate() {
        let count = (k + 1) as f64;
        welfare += r.welfare;
        max_abs_budget = max_abs_budget.max(r.broker_budget.abs());
        iters += r.iterations;
        max_iters = max_iters.max(r.iterations);
        for (c, p) in platform_cum.iter_mut().zip(&r.platform_payoffs) {
            *c += p;
        }
        for (c, p) in poi_cum.iter_mut().zip(&r.poi_payoffs) {
            *c += p;
        }
        let mut avg = Vec::with_capacity(platforms);
        for n in 0..platforms {
            age_sums[n] += r.ages[n];
            let a = age_sums[n] / count;
            if first_satisfied[n].is_none() && a <= thresholds[n] {
                first_satisfied[n] = Some(r.t);
            }
            avg.push(a);
        }
        if first_all_satisfied.is_none() && avg.iter().zip(thresholds).all(|(a, thr)| a <= thr) {
            first_all_satisfied = Some(r.t);
        }
        running.push(avg);
    }
    let periods = records.len();
    Ok(Summary {
        periods,
        time_average_welfare: welfare / periods as f64,
        final_average_ages: running.last().cloned().unwrap_or_default(),
        running_average_ages: running,
        first_satisfied,
        first_all_satisfied,
        cumulative_platform_payoffs: platform_cum,
        cumulative_poi_payoffs: poi_cum,
        max_abs_budget,
        mean_iterations: iters as f64 / periods as f64,
        max_iterations: max_iters,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn queues(v: f64) -> QueueState {
        QueueState {
            broker_queues: vec![v],
            platform_queues: vec![v],
        }
    }

    #[test]
    fn queue_update_examples() {
        assert_eq!(queue_update(&queues(1.0), &[3.0], &[2.5]), queues(1.5));
        assert_eq!(queue_update(&queues(0.0), &[2.0], &[2.5]), queues(0.0));
        assert_eq!(queue_update(&queues(0.75), &[2.5], &[2.5]), queues(0.75));
    }

    fn record(t: usize, welfare: f64, age: f64) -> PeriodRecord {
        PeriodRecord {
            t,
            welfare,
            ages: vec![age],
            platform_payoffs: vec![0.5],
            poi_payoffs: vec![0.25, 0.125],
            broker_budget: -1e-6,
            price_sum: 3.0,
            queues: queues(0.0),
            iterations: 7,
            residual: 1e-5,
        }
    }

    #[test]
    fn single_period_summary_is_the_record() {
        let s = aggregate_metrics(&[record(1, 2.0, 3.0)], &[2.5]).unwrap();
        assert_eq!(s.time_average_welfare, 2.0);
        assert_eq!(s.final_average_ages, vec![3.0]);
        assert_eq!(s.cumulative_platform_payoffs, vec![0.5]);
        assert_eq!(s.cumulative_poi_payoffs, vec![0.25, 0.125]);
        assert_eq!(s.max_abs_budget, 1e-6);
        assert_eq!(s.first_all_satisfied, None);
    }

    #[test]
    fn identical_records_average_to_the_common_value() {
        let recs: Vec<_> = (1..=5).map(|t| record(t, 1.5, 2.0)).collect();
        let s = aggregate_metrics(&recs, &[2.5]).unwrap();
        assert_eq!(s.time_average_welfare, 1.5);
        assert!(s.running_average_ages.iter().all(|a| a == &vec![2.0]));
        assert_eq!(s.first_satisfied, vec![Some(1)]);
        assert_eq!(s.cumulative_platform_payoffs, vec![2.5]);
    }

    #[test]
    fn satisfaction_uses_the_running_average() {
        let recs = vec![record(1, 0.0, 4.0), record(2, 0.0, 2.0), record(3, 0.0, 1.0)];
        let s = aggregate_metrics(&recs, &[2.5]).unwrap();
        // averages: 4, 3, 7/3
        assert_eq!(s.first_satisfied, vec![Some(3)]);
    }

    #[test]
    fn empty_records_are_rejected() {
        assert!(aggregate_metrics(&[], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn queues_stay_nonnegative_and_coherent(
            (q, ages, thr) in (1usize..5).prop_flat_map(|n| (
                prop::collection::vec(0.0f64..50.0, n),
                prop::collection::vec(0.0f64..10.0, n),
                prop::collection::vec(0.1f64..10.0, n),
            )),
        ) {
            let state = QueueState { broker_queues: q.clone(), platform_queues: q.clone() };
            let next = queue_update(&state, &ages, &thr);
            prop_assert!(next.is_coherent());
            for n in 0..q.len() {
                let v = next.broker_queues[n];
                prop_assert!(v >= 0.0);
                prop_assert!(v >= q[n] + ages[n] - thr[n]);
            }
        }
    }
}
