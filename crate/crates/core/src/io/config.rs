//! Run configuration, stored as TOML.
//!
//! ```toml
//! V_values = [0.5, 1.0, 100.0]
//! epsilon = 0.1
//! gamma = 1e-4
//! seeds = [1, 2, 3]
//! output_dir = "out"
//! price_file = "synthetic"
//!
//! [scenario]
//! num_platforms = 3
//! valuation_means = [[1.1, 1.1, 0.6], ...]   # one row per PoI
//! ...
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::auction::{AuctionParams, StepRule, DEFAULT_EPSILON, DEFAULT_GAMMA, DEFAULT_MAX_ITERS};
use crate::error::{Error, Result};
use crate::horizon::HorizonParams;
use crate::io::prices::{load_price_csv, PriceSeries};
use crate::market::MarketScenario;

pub const SYNTHETIC: &str = "synthetic";
/// A price file value meaning "one unit price every hour".
pub const FLAT: &str = "flat";

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}
fn default_initial_price() -> f64 {
    1.0
}
fn default_price_file() -> String {
    SYNTHETIC.to_string()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_synthetic_len() -> usize {
    24 * 91
}
fn default_q_over_v() -> Vec<f64> {
    vec![0.1, 1.0, 100.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "V_values")]
    pub v_values: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub step_rule: StepRule,
    #[serde(default = "default_initial_price")]
    pub initial_price: f64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Path to a `datetime,price` CSV, `"synthetic"` or `"flat"`.
    #[serde(default = "default_price_file")]
    pub price_file: String,
    /// Hours of synthetic prices generated when `price_file` is synthetic.
    #[serde(default = "default_synthetic_len")]
    pub synthetic_hours: usize,
    /// Backlog-over-V values the `converge` command runs at.
    #[serde(default = "default_q_over_v")]
    pub q_over_v: Vec<f64>,
    pub scenario: MarketScenario,
}

impl RunConfig {
    /// The three-platform, five-PoI market swept over `V in {0.5, 1, 100}`.
    pub fn default_experiment() -> Self {
        Self {
            v_values: vec![0.5, 1.0, 100.0],
            epsilon: DEFAULT_EPSILON,
            gamma: DEFAULT_GAMMA,
            max_iters: DEFAULT_MAX_ITERS,
            step_rule: StepRule::Constant,
            initial_price: 1.0,
            seeds: (1..=30).collect(),
            output_dir: default_output_dir(),
            price_file: default_price_file(),
            synthetic_hours: default_synthetic_len(),
            q_over_v: default_q_over_v(),
            scenario: MarketScenario::three_platforms_five_pois(),
        }
    }

    /// The one-platform, two-PoI market used to watch a single auction.
    pub fn convergence_experiment() -> Self {
        Self {
            v_values: vec![1.0],
            seeds: vec![1],
            price_file: FLAT.to_string(),
            scenario: MarketScenario::one_platform_two_pois(),
            ..Self::default_experiment()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_values.is_empty() || self.v_values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("V_values must be a nonempty list of positive numbers".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(self.initial_price > 0.0) {
            return Err(Error::Config("initial_price must be positive".into()));
        }
        if self.q_over_v.iter().any(|q| !(*q >= 0.0)) {
            return Err(Error::Config("q_over_v entries must be nonnegative".into()));
        }
        self.auction_params()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.scenario.validate()
    }

    pub fn auction_params(&self) -> AuctionParams {
        AuctionParams {
            epsilon: self.epsilon,
            gamma: self.gamma,
            max_iters: self.max_iters,
            step_rule: self.step_rule,
            rate_floor: self.scenario.limits.rate_floor,
            rate_ceiling: self.scenario.limits.rate_ceiling,
            record_trace: false,
        }
    }

    pub fn horizon_params(&self, v: f64) -> HorizonParams {
        HorizonParams {
            v,
            auction: self.auction_params(),
            initial_price: self.initial_price,
        }
    }

    /// The scenario with its seed replaced by `seed`.
    pub fn scenario_for_seed(&self, seed: u64) -> MarketScenario {
        MarketScenario {
            rng_seed: seed,
            ..self.scenario.clone()
        }
    }

    /// Loads the configured price file, or generates the synthetic series
    /// from the scenario's seed, or the flat one.
    pub fn load_prices(&self, base_dir: Option<&Path>) -> Result<PriceSeries> {
        match self.price_file.as_str() {
            SYNTHETIC => return Ok(PriceSeries::synthetic(self.scenario.rng_seed, self.synthetic_hours)),
            FLAT => return Ok(PriceSeries::constant(1.0, self.synthetic_hours.max(1))),
            _ => {}
        }
        let path = Path::new(&self.price_file);
        match base_dir {
            Some(dir) if path.is_relative() => load_price_csv(dir.join(path)),
            _ => load_price_csv(path),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config = Self::from_toml(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// SHA-256 of the canonical TOML form, in hex.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_idempotent() {
        for config in [RunConfig::default_experiment(), RunConfig::convergence_experiment()] {
            let once = config.to_toml().unwrap();
            let parsed = RunConfig::from_toml(&once).unwrap();
            assert_eq!(parsed, config);
            assert_eq!(parsed.to_toml().unwrap(), once);
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default_experiment();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
        b.gamma = 1e-5;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn validation_failures() {
        let mut c = RunConfig::default_experiment();
        c.seeds.clear();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default_experiment();
        c.v_values = vec![];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default_experiment();
        c.scenario.limits.rho_cap = 1.5;
        assert!(c.validate().is_err());
        assert!(RunConfig::default_experiment().validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::default_experiment().to_toml().unwrap();
        text.insert_str(0, "colour = 3\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }
}
