use thiserror::Error;

use crate::auction::IterationRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The age formula is only defined for stable, non-degenerate queues.
    #[error("age domain error: {0}")]
    AgeDomain(String),

    #[error("solver did not converge after {iterations} steps (residual {residual:.3e})")]
    SolverNonConvergence { iterations: usize, residual: f64 },

    #[error("allocation with zero consistency price at (poi {poi}, platform {platform})")]
    ZeroPrice { poi: usize, platform: usize },

    #[error("auction did not converge after {iterations} iterations (residual {residual:.3e})")]
    AuctionNonConvergence {
        iterations: usize,
        residual: f64,
        trace: Vec<IterationRecord>,
    },

    #[error("period {period}: {source}")]
    Period {
        period: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cell V={v} seed={seed}: {source}")]
    Cell {
        v: f64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("grid search too large: {0}")]
    InstanceTooLarge(String),

    #[error("dual search did not converge: {0}")]
    DualNonConvergence(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("price file line {line}: {message}")]
    PriceParse { line: u64, message: String },

    #[error("price file line {line}: timestamp is not after the previous row")]
    PriceOrder { line: u64 },

    #[error("price file contains no rows")]
    EmptyPrices,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn in_period(self, period: usize) -> Self {
        Error::Period {
            period,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_cell(self, v: f64, seed: u64) -> Self {
        Error::Cell {
            v,
            seed,
            source: Box::new(self),
        }
    }
}
