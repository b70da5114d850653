//! Long-term decomposition auctions for fresh status acquisition markets.
//!
//! Platforms buy status updates from points of interest (PoIs) at per-pair
//! uploading rates. Each period a broker runs an iterative auction on
//! consistency prices until the rates platforms request match the rates
//! PoIs supply. Lyapunov virtual queues carry each platform's accumulated
//! freshness violation across periods and enter the next period's bids as
//! an age penalty.
//!
//! * [`age`]: stationary age of a multi-source M/M/1 platform and its derivatives.
//! * [`market`]: scenarios, random factors, utilities, costs and best responses.
//! * [`auction`]: allocation and payment rules and the price iteration.
//! * [`horizon`]: the multi-period driver and its metrics.
//! * [`oracles`]: independent reference computations.
//! * [`io`]: configuration, price ingestion and CSV output.
//! * [`validation`]: the self-checks behind `ltd validate`.

pub mod age;
pub mod auction;
pub mod error;
pub mod horizon;
pub mod io;
pub mod market;
pub mod matrix;
pub mod oracles;
mod solver;
pub mod validation;

pub use age::{AgeModel, AgeParams, RateLimits};
pub use auction::{AuctionOutcome, AuctionParams, BidSet};
pub use error::{Error, Result};
pub use market::{MarketScenario, RandomFactors};
pub use matrix::{PairMatrix, PriceMatrix, RateMatrix};
pub use solver::{Region, Settings, Solution};
