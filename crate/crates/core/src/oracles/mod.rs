//! Reference computations the mechanism is checked against.
//!
//! None of these are used by the mechanism itself.

pub mod central;
pub mod des;
pub mod sstar;

pub use central::{centralized_virtual_optimum, grid_bruteforce, platform_virtual_optimum, virtual_welfare, TOL_ORACLE};
pub use des::{des_average_age, des_event_log, DesAges, DesEvent, DesEventKind};
pub use sstar::{scenario_sampled_sstar, sstar_from_factors, SStarEstimate};

/// Stationary age written out term by term, with no derivative machinery
/// and no domain checks.
pub fn reference_age(serving_rate: f64, rates: &[f64]) -> f64 {
    let r = serving_rate;
    let total: f64 = rates.iter().map(|x| x / r).sum();
    let mut sum = 0.0;
    for x in rates {
        let rho = x / r;
        let rest = total - rho;
        sum += (1.0 / r)
            * (1.0 / rho
                + 1.0 / (1.0 - rest)
                + rho * rho * (1.0 - rho * rest) / ((1.0 - rho) * (1.0 - rest).powi(3)));
    }
    sum / rates.len() as f64
}
