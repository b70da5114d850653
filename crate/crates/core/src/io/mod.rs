//! Configuration, price ingestion and result files.

pub mod config;
pub mod output;
pub mod prices;
pub mod runs;

pub use config::RunConfig;
pub use prices::{load_price_csv, PriceSeries};
