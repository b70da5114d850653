//! Centralized maximizers of the per-period virtual social welfare
//!
//! ```text
//! sum_n [ sum_i U_{i,n}(x_{i,n}) - C_{i,n}(x_{i,n}) ] - sum_n (Q_n / V) A_n(x_n)
//! ```
//!
//! Utility and cost are per-pair sums, so the problem splits into one
//! independent problem per platform.

use crate::age::AgeModel;
use crate::error::{Error, Result};
use crate::market::{
    pair_cost, pair_marginal_cost, pair_marginal_utility, pair_utility, pair_utility_curvature, MarketScenario,
    RandomFactors,
};
use crate::matrix::{PairMatrix, RateMatrix};
use crate::solver::{self, Objective, Settings};

use super::reference_age;

pub const TOL_ORACLE: f64 = 1e-8;

const ORACLE_SETTINGS: Settings = Settings {
    tolerance: TOL_ORACLE,
    max_steps: 100_000,
};

/// Platform `n`'s share of the virtual welfare with age weight `weight`.
struct PlatformWelfare<'a> {
    valuations: Vec<f64>,
    sensitivities: Vec<f64>,
    quadratic: Vec<f64>,
    weight: f64,
    age: &'a AgeModel,
    alpha: f64,
}

impl<'a> PlatformWelfare<'a> {
    fn new(factors: &RandomFactors, platform: usize, weight: f64, age: &'a AgeModel, alpha: f64) -> Self {
        let pois = factors.valuations.pois();
        Self {
            valuations: factors.valuations.column(platform),
            sensitivities: factors.privacy_sensitivities.column(platform),
            quadratic: (0..pois).map(|i| factors.quadratic_cost(i)).collect(),
            weight,
            age,
            alpha,
        }
    }

    fn welfare(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, xi)| {
                pair_utility(self.valuations[i], *xi, self.alpha) - pair_cost(self.sensitivities[i], self.quadratic[i], *xi)
            })
            .sum()
    }
}

impl Objective for PlatformWelfare<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.welfare(x);
        if self.weight != 0.0 {
            v -= self.weight * self.age.age_unchecked(x);
        }
        v
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        if self.weight != 0.0 {
            self.age.gradient_unchecked(x, grad);
        } else {
            grad.fill(0.0);
        }
        for (i, g) in grad.iter_mut().enumerate() {
            *g = pair_marginal_utility(self.valuations[i], x[i], self.alpha)
                - pair_marginal_cost(self.sensitivities[i], self.quadratic[i], x[i])
                - self.weight * *g;
        }
    }

    fn curvature(&self, x: &[f64], out: &mut [f64]) {
        if self.weight != 0.0 {
            self.age.second_derivatives_unchecked(x, out);
        } else {
            out.fill(0.0);
        }
        for (i, h) in out.iter_mut().enumerate() {
            *h = pair_utility_curvature(self.valuations[i], x[i], self.alpha)
                + 2.0 * self.quadratic[i]
                + self.weight * *h;
        }
    }
}

/// Maximizes platform `n`'s welfare share minus `weight * A_n`.
pub fn platform_virtual_optimum(
    factors: &RandomFactors,
    platform: usize,
    weight: f64,
    age: &AgeModel,
    alpha: f64,
    start: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if !(weight >= 0.0 && weight.is_finite()) {
        return Err(Error::invalid(format!("age weight must be finite and nonnegative, got {weight}")));
    }
    let objective = PlatformWelfare::new(factors, platform, weight, age, alpha);
    let pois = factors.valuations.pois();
    let limits = age.limits();
    let mid = vec![0.5 * (limits.rate_floor + limits.rate_ceiling); pois];
    let start = start.unwrap_or(&mid);
    Ok(solver::maximize(&objective, &age.region(), start, ORACLE_SETTINGS)?.x)
}

fn check_queues(queues: &[f64], v: f64, scenario: &MarketScenario) -> Result<()> {
    if queues.len() != scenario.num_platforms {
        return Err(Error::invalid("one queue per platform required"));
    }
    if !(v > 0.0) || queues.iter().any(|q| !(*q >= 0.0)) {
        return Err(Error::invalid("V must be positive and queues nonnegative"));
    }
    Ok(())
}

/// The rates a planner who knew every private factor would choose.
pub fn centralized_virtual_optimum(
    factors: &RandomFactors,
    queues: &[f64],
    v: f64,
    scenario: &MarketScenario,
) -> Result<RateMatrix> {
    check_queues(queues, v, scenario)?;
    let ages = scenario.age_models()?;
    let mut x = PairMatrix::zeros(scenario.num_pois, scenario.num_platforms);
    for n in 0..scenario.num_platforms {
        let col = platform_virtual_optimum(factors, n, queues[n] / v, &ages[n], scenario.alpha, None)?;
        x.set_column(n, &col);
    }
    Ok(x.into())
}

/// Virtual welfare of `rates`, with the age evaluated straight from the
/// closed form.
pub fn virtual_welfare(
    rates: &RateMatrix,
    factors: &RandomFactors,
    queues: &[f64],
    v: f64,
    scenario: &MarketScenario,
) -> Result<f64> {
    check_queues(queues, v, scenario)?;
    let mut total = crate::market::social_welfare(rates, factors, scenario.alpha);
    for n in 0..scenario.num_platforms {
        if queues[n] > 0.0 {
            total -= queues[n] / v * reference_age(scenario.serving_rates[n], &rates.column(n));
        }
    }
    Ok(total)
}

/// Largest number of grid evaluations [`grid_bruteforce`] accepts per platform.
pub const MAX_GRID_POINTS: f64 = 5e7;

/// Exhaustive search of the virtual welfare over a rate grid
/// `{floor, floor + step, ...} ∪ {ceiling}`.
pub fn grid_bruteforce(
    factors: &RandomFactors,
    queues: &[f64],
    v: f64,
    scenario: &MarketScenario,
    grid_step: f64,
) -> Result<RateMatrix> {
    check_queues(queues, v, scenario)?;
    let (pois, platforms) = (scenario.num_pois, scenario.num_platforms);
    if pois * platforms > 4 {
        return Err(Error::InstanceTooLarge(format!("{pois} PoIs x {platforms} platforms exceeds 4 pairs")));
    }
    if !(grid_step > 0.0 && grid_step <= 1e-2) {
        return Err(Error::invalid(format!("grid step {grid_step} must lie in (0, 1e-2]")));
    }
    let limits = scenario.limits;
    let mut axis = Vec::new();
    let mut k = 0usize;
    loop {
        let v = limits.rate_floor + k as f64 * grid_step;
        if v >= limits.rate_ceiling {
            break;
        }
        axis.push(v);
        k += 1;
    }
    axis.push(limits.rate_ceiling);
    axis.dedup();
    let per_platform = (axis.len() as f64).powi(pois as i32);
    if per_platform > MAX_GRID_POINTS {
        return Err(Error::InstanceTooLarge(format!(
            "{per_platform:.3e} grid points per platform exceeds {MAX_GRID_POINTS:.0e}"
        )));
    }

    let mut best = PairMatrix::zeros(pois, platforms);
    for n in 0..platforms {
        let r = scenario.serving_rates[n];
        let cap = limits.rho_cap * r;
        let weight = queues[n] / v;
        let mut idx = vec![0usize; pois];
        let mut x = vec![0.0; pois];
        let mut best_value = f64::NEG_INFINITY;
        let mut best_x = None;
        'odometer: loop {
            for i in 0..pois {
                x[i] = axis[idx[i]];
            }
            if x.iter().sum::<f64>() <= cap {
                let mut value = 0.0;
                for i in 0..pois {
                    value += pair_utility(factors.valuations.get(i, n), x[i], scenario.alpha)
                        - pair_cost(factors.privacy_sensitivities.get(i, n), factors.quadratic_cost(i), x[i]);
                }
                if weight > 0.0 {
                    value -= weight * reference_age(r, &x);
                }
                if value > best_value {
                    best_value = value;
                    best_x = Some(x.clone());
                }
            }
            for i in 0..pois {
                idx[i] += 1;
                if idx[i] < axis.len() {
                    continue 'odometer;
                }
                idx[i] = 0;
            }
            break;
        }
        let col = best_x.ok_or_else(|| Error::invalid(format!("platform {n}: no grid point meets the utilization cap")))?;
        best.set_column(n, &col);
    }
    Ok(best.into())
}
