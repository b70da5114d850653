//! The per-period auction.
//!
//! [`broker`] holds the rules the broker applies (allocation, payments,
//! price updates) and the iteration itself. [`run_auction`] wires that
//! iteration to truthful market agents.

pub mod broker;

pub use broker::*;

use crate::age::AgeModel;
use crate::error::{Error, Result};
use crate::market::{MarketScenario, RandomFactors, TruthfulAgents};
use crate::matrix::PriceMatrix;

/// Runs one period's auction between truthful agents.
///
/// `queue_over_v[n]` is platform `n`'s virtual backlog divided by `V`.
pub fn run_auction(
    scenario: &MarketScenario,
    ages: &[AgeModel],
    factors: &RandomFactors,
    queue_over_v: &[f64],
    initial_prices: &PriceMatrix,
    params: &AuctionParams,
) -> Result<AuctionOutcome> {
    if queue_over_v.len() != scenario.num_platforms || ages.len() != scenario.num_platforms {
        return Err(Error::invalid("one queue and one age model per platform required"));
    }
    if initial_prices.pois() != scenario.num_pois || initial_prices.platforms() != scenario.num_platforms {
        return Err(Error::invalid("initial prices have the wrong shape"));
    }
    let mut agents = TruthfulAgents::new(factors, ages, queue_over_v, scenario.alpha, scenario.limits);
    run_broker(&mut agents, initial_prices, params)
}
