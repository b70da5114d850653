//! Scenario-sampled estimate of the best long-run welfare achievable with
//! full knowledge of the factor distribution.
//!
//! Draw `K` factor realizations and pick one rate matrix per realization to
//! maximize average welfare subject to each platform's average age staying
//! within its threshold. Platforms decouple. For platform `n` and a
//! multiplier `mu`, each realization's best rates maximize welfare minus
//! `mu * A_n`; the average age of those rates is nonincreasing in `mu`, so
//! the multiplier that just meets the threshold is found by bisection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::age::AgeModel;
use crate::error::{Error, Result};
use crate::io::prices::PriceSeries;
use crate::market::{platform_utility, pair_cost, sample_factors, MarketScenario, RandomFactors};

use super::central::platform_virtual_optimum;

pub const MIN_SCENARIOS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSStar {
    /// Average welfare share of the feasible (primal) policy.
    pub welfare: f64,
    /// Lagrangian dual bound; at least `welfare`.
    pub dual_bound: f64,
    pub multiplier: f64,
    pub average_age: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SStarEstimate {
    /// Average welfare of the feasible policy found.
    pub estimate: f64,
    pub dual_bound: f64,
    /// `dual_bound - estimate`
    pub duality_gap: f64,
    pub platforms: Vec<PlatformSStar>,
    pub scenarios: usize,
}

/// Platform `n`'s welfare share: its utility minus the cost of its pairs.
fn platform_welfare(x: &[f64], factors: &RandomFactors, platform: usize, alpha: f64) -> f64 {
    let cost: f64 = x
        .iter()
        .enumerate()
        .map(|(i, xi)| pair_cost(factors.privacy_sensitivities.get(i, platform), factors.quadratic_cost(i), *xi))
        .sum();
    platform_utility(x, factors, platform, alpha) - cost
}

struct Evaluation {
    welfare: f64,
    age: f64,
    rates: Vec<Vec<f64>>,
}

fn evaluate(
    factors: &[RandomFactors],
    platform: usize,
    mu: f64,
    age: &AgeModel,
    alpha: f64,
    warm: &[Vec<f64>],
) -> Result<Evaluation> {
    let rates = factors
        .par_iter()
        .zip(warm.par_iter())
        .map(|(f, w)| platform_virtual_optimum(f, platform, mu, age, alpha, Some(w)))
        .collect::<Result<Vec<_>>>()?;
    let k = factors.len() as f64;
    let mut welfare = 0.0;
    let mut total_age = 0.0;
    for (f, x) in factors.iter().zip(&rates) {
        welfare += platform_welfare(x, f, platform, alpha);
        total_age += age.age(x)?;
    }
    Ok(Evaluation {
        welfare: welfare / k,
        age: total_age / k,
        rates,
    })
}

fn platform_sstar(
    factors: &[RandomFactors],
    platform: usize,
    threshold: f64,
    age: &AgeModel,
    alpha: f64,
) -> Result<PlatformSStar> {
    let pois = factors[0].valuations.pois();
    let limits = age.limits();
    let mut warm = vec![vec![0.5 * (limits.rate_floor + limits.rate_ceiling); pois]; factors.len()];
    let free = evaluate(factors, platform, 0.0, age, alpha, &warm)?;
    if free.age <= threshold {
        return Ok(PlatformSStar {
            welfare: free.welfare,
            dual_bound: free.welfare,
            multiplier: 0.0,
            average_age: free.age,
        });
    }
    warm = free.rates;

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut feasible = loop {
        let e = evaluate(factors, platform, hi, age, alpha, &warm)?;
        if e.age <= threshold {
            break e;
        }
        warm = e.rates;
        lo = hi;
        hi *= 4.0;
        if hi > 1e9 {
            return Err(Error::DualNonConvergence(format!(
                "platform {platform}: average age {:.6} stays above threshold {threshold} for every multiplier",
                e.age
            )));
        }
    };
    for _ in 0..100 {
        if hi - lo <= 1e-10 * (1.0 + hi) || threshold - feasible.age <= 1e-9 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let e = evaluate(factors, platform, mid, age, alpha, &feasible.rates)?;
        if e.age <= threshold {
            hi = mid;
            feasible = e;
        } else {
            lo = mid;
        }
    }
    // Dual function at the feasible multiplier: the Lagrangian maximum plus
    // mu times the threshold.
    let dual_bound = feasible.welfare - hi * feasible.age + hi * threshold;
    Ok(PlatformSStar {
        welfare: feasible.welfare,
        dual_bound,
        multiplier: hi,
        average_age: feasible.age,
    })
}

/// S* over explicit factor realizations.
pub fn sstar_from_factors(scenario: &MarketScenario, factors: &[RandomFactors]) -> Result<SStarEstimate> {
    if factors.is_empty() {
        return Err(Error::invalid("no factor realizations"));
    }
    let ages = scenario.age_models()?;
    let platforms = (0..scenario.num_platforms)
        .map(|n| platform_sstar(factors, n, scenario.freshness_thresholds[n], &ages[n], scenario.alpha))
        .collect::<Result<Vec<_>>>()?;
    let estimate = platforms.iter().map(|p| p.welfare).sum::<f64>();
    let dual_bound = platforms.iter().map(|p| p.dual_bound).sum::<f64>();
    Ok(SStarEstimate {
        estimate,
        dual_bound,
        duality_gap: dual_bound - estimate,
        platforms,
        scenarios: factors.len(),
    })
}

/// S* over the factors of periods `first_period .. first_period + K`.
pub fn scenario_sampled_sstar(
    scenario: &MarketScenario,
    prices: &PriceSeries,
    num_scenarios: usize,
    first_period: usize,
) -> Result<SStarEstimate> {
    if num_scenarios < MIN_SCENARIOS {
        return Err(Error::invalid(format!("need at least {MIN_SCENARIOS} scenarios, got {num_scenarios}")));
    }
    scenario.validate()?;
    let factors: Vec<RandomFactors> = (first_period..first_period + num_scenarios)
        .map(|t| sample_factors(scenario, t, prices))
        .collect();
    sstar_from_factors(scenario, &factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::central::centralized_virtual_optimum;

    #[test]
    fn slack_thresholds_give_unconstrained_average() {
        let mut s = MarketScenario::three_platforms_five_pois();
        s.freshness_thresholds = vec![1e6; 3];
        let prices = PriceSeries::synthetic(1, 240);
        let est = scenario_sampled_sstar(&s, &prices, 100, 0).unwrap();
        let mut direct = 0.0;
        for t in 0..100 {
            let f = sample_factors(&s, t, &prices);
            let x = centralized_virtual_optimum(&f, &[0.0; 3], 1.0, &s).unwrap();
            direct += crate::market::social_welfare(&x, &f, s.alpha);
        }
        direct /= 100.0;
        assert!((est.estimate - direct).abs() < 1e-6, "{} vs {direct}", est.estimate);
        assert!(est.duality_gap.abs() < 1e-12);
        assert!(est.platforms.iter().all(|p| p.multiplier == 0.0));
    }

    #[test]
    fn single_realization_meets_threshold_exactly() {
        let s = MarketScenario::three_platforms_five_pois();
        let prices = PriceSeries::synthetic(1, 240);
        let f = vec![sample_factors(&s, 0, &prices)];
        let est = sstar_from_factors(&s, &f).unwrap();
        for (p, thr) in est.platforms.iter().zip(&s.freshness_thresholds) {
            assert!(p.average_age <= thr + 1e-12);
            if p.multiplier > 0.0 {
                assert!(thr - p.average_age < 1e-3);
            }
        }
        assert!(est.duality_gap >= 0.0);
    }

    #[test]
    fn too_few_scenarios_are_refused() {
        let s = MarketScenario::three_platforms_five_pois();
        assert!(scenario_sampled_sstar(&s, &PriceSeries::constant(1.0, 1), 10, 0).is_err());
    }
}
