//! Market participants: scenario configuration, per-period random factors,
//! the alpha-fair platform utility and quadratic PoI cost, and each agent's
//! truthful best response to announced consistency prices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::age::{AgeModel, RateLimits};
use crate::auction::{truthful_bids, BidProvider, BidSet};
use crate::error::{Error, Result};
use crate::io::prices::PriceSeries;
use crate::matrix::{PairMatrix, PriceMatrix, RateMatrix};
use crate::solver::{self, Objective, Settings};

/// Projected-gradient tolerance for agent best responses.
pub const TOL_AGENT: f64 = 1e-7;
pub const MAX_INNER_STEPS: usize = 10_000;

pub const AGENT_SETTINGS: Settings = Settings {
    tolerance: TOL_AGENT,
    max_steps: MAX_INNER_STEPS,
};

/// Static description of a market: who participates, their capacities and
/// freshness targets, and the distributions of their private factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketScenario {
    pub num_platforms: usize,
    pub num_pois: usize,
    pub serving_rates: Vec<f64>,
    pub freshness_thresholds: Vec<f64>,
    pub horizon: usize,
    /// Wall-clock length of a period. Informational only.
    pub period_duration: f64,
    #[serde(rename = "lyapunov_V")]
    pub lyapunov_v: f64,
    pub alpha: f64,
    /// One row per PoI, one entry per platform.
    pub valuation_means: Vec<Vec<f64>>,
    pub valuation_std: f64,
    pub privacy_means: Vec<Vec<f64>>,
    pub privacy_std: f64,
    pub energy_levels: Vec<f64>,
    /// Multiplier applied to raw electricity prices; `None` means
    /// `1 / mean(price series)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_scale: Option<f64>,
    /// Per-PoI multipliers on the shared electricity price.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poi_price_multipliers: Option<Vec<f64>>,
    pub rng_seed: u64,
    #[serde(default)]
    pub limits: RateLimits,
}

impl MarketScenario {
    /// Three platforms and five PoIs. Platforms 1 and 2 share a high mean
    /// valuation, platform 3 a lower one; platform 2 has the strictest
    /// freshness threshold and platform 3 the slowest server. Each factor's
    /// standard deviation is a tenth of its average mean.
    pub fn three_platforms_five_pois() -> Self {
        let high = [1.1, 1.0, 0.9, 1.0, 1.2];
        let low = [0.6, 0.5, 0.55, 0.5, 0.65];
        let valuation_means = (0..5).map(|i| vec![high[i], high[i], low[i]]).collect();
        let privacy = [
            [1.5, 1.6, 1.0],
            [1.4, 1.5, 0.9],
            [1.3, 1.4, 0.8],
            [1.6, 1.5, 1.0],
            [1.5, 1.7, 1.1],
        ];
        let privacy_means = privacy.iter().map(|r| r.to_vec()).collect();
        Self {
            num_platforms: 3,
            num_pois: 5,
            serving_rates: vec![10.0, 10.0, 5.0],
            freshness_thresholds: vec![2.5, 2.0, 2.5],
            horizon: 2000,
            period_duration: 1.0,
            lyapunov_v: 100.0,
            alpha: 0.5,
            valuation_means,
            valuation_std: 0.088,
            privacy_means,
            privacy_std: 0.132,
            energy_levels: vec![0.25, 0.2, 0.3, 0.25, 0.2],
            price_scale: None,
            poi_price_multipliers: None,
            rng_seed: 1,
            limits: RateLimits::default(),
        }
    }

    /// One platform and two PoIs with deterministic factors, for watching a
    /// single period's price iteration. Age pressure pushes both rates up
    /// from their welfare-maximizing values.
    pub fn one_platform_two_pois() -> Self {
        Self {
            num_platforms: 1,
            num_pois: 2,
            serving_rates: vec![2.8],
            freshness_thresholds: vec![1.5],
            horizon: 1,
            period_duration: 1.0,
            lyapunov_v: 1.0,
            alpha: 0.5,
            valuation_means: vec![vec![2.5], vec![2.6]],
            valuation_std: 0.0,
            privacy_means: vec![vec![2.65], vec![2.7]],
            privacy_std: 0.0,
            energy_levels: vec![0.045, 0.075],
            price_scale: Some(1.0),
            poi_price_multipliers: None,
            rng_seed: 7,
            limits: RateLimits::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, i) = (self.num_platforms, self.num_pois);
        let bad = |msg: String| Err(Error::Config(msg));
        if n == 0 || i == 0 || self.horizon == 0 {
            return bad("num_platforms, num_pois and horizon must be at least 1".into());
        }
        if self.serving_rates.len() != n || self.freshness_thresholds.len() != n {
            return bad(format!("serving_rates and freshness_thresholds need {n} entries"));
        }
        if self.energy_levels.len() != i {
            return bad(format!("energy_levels needs {i} entries"));
        }
        for (name, m) in [("valuation_means", &self.valuation_means), ("privacy_means", &self.privacy_means)] {
            if m.len() != i || m.iter().any(|r| r.len() != n) {
                return bad(format!("{name} must have {i} rows of {n} entries"));
            }
            if m.iter().flatten().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad(format!("{name} entries must be finite and nonnegative"));
            }
        }
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if !self.serving_rates.iter().all(positive) {
            return bad("serving_rates must be positive".into());
        }
        if !self.freshness_thresholds.iter().all(positive) {
            return bad("freshness_thresholds must be positive".into());
        }
        if !self.energy_levels.iter().all(positive) {
            return bad("energy_levels must be positive".into());
        }
        if !positive(&self.lyapunov_v) || !positive(&self.period_duration) {
            return bad("lyapunov_v and period_duration must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        if !(self.valuation_std >= 0.0 && self.privacy_std >= 0.0) {
            return bad("standard deviations must be nonnegative".into());
        }
        if let Some(s) = self.price_scale {
            if !positive(&s) {
                return bad("price_scale must be positive".into());
            }
        }
        if let Some(m) = &self.poi_price_multipliers {
            if m.len() != i || !m.iter().all(positive) {
                return bad(format!("poi_price_multipliers needs {i} positive entries"));
            }
        }
        self.limits.validate().map_err(|e| Error::Config(e.to_string()))?;
        for (k, r) in self.serving_rates.iter().enumerate() {
            if i as f64 * self.limits.rate_floor > self.limits.rho_cap * r {
                return bad(format!(
                    "platform {k}: {i} PoIs at the rate floor exceed utilization cap {} of serving rate {r}",
                    self.limits.rho_cap
                ));
            }
        }
        Ok(())
    }

    pub fn age_models(&self) -> Result<Vec<AgeModel>> {
        self.serving_rates
            .iter()
            .map(|r| AgeModel::new(*r, self.limits))
            .collect()
    }

    pub fn effective_price_scale(&self, prices: &PriceSeries) -> f64 {
        self.price_scale.unwrap_or_else(|| 1.0 / prices.mean())
    }
}

/// One period's realization of every agent's private factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomFactors {
    /// sigma_{i,n}
    pub valuations: PairMatrix,
    /// l_{i,n}
    pub privacy_sensitivities: PairMatrix,
    /// pi_i, already scaled
    pub electricity_price: Vec<f64>,
    /// e_i
    pub energy: Vec<f64>,
}

impl RandomFactors {
    /// Coefficient of the quadratic cost term, `pi_i * e_i`.
    pub fn quadratic_cost(&self, poi: usize) -> f64 {
        self.electricity_price[poi] * self.energy[poi]
    }
}

// Per-pair primitives.

pub fn pair_utility(valuation: f64, rate: f64, alpha: f64) -> f64 {
    valuation * rate.powf(1.0 - alpha) / (1.0 - alpha)
}

pub fn pair_marginal_utility(valuation: f64, rate: f64, alpha: f64) -> f64 {
    valuation * rate.powf(-alpha)
}

/// Negated second derivative of [`pair_utility`].
pub fn pair_utility_curvature(valuation: f64, rate: f64, alpha: f64) -> f64 {
    alpha * valuation * rate.powf(-alpha - 1.0)
}

pub fn pair_cost(sensitivity: f64, quadratic: f64, rate: f64) -> f64 {
    sensitivity * rate + quadratic * rate * rate
}

pub fn pair_marginal_cost(sensitivity: f64, quadratic: f64, rate: f64) -> f64 {
    sensitivity + 2.0 * quadratic * rate
}

/// `U_n(x_n) = sum_i sigma_{i,n} x_{i,n}^(1-alpha) / (1-alpha)`
pub fn platform_utility(rates: &[f64], factors: &RandomFactors, platform: usize, alpha: f64) -> f64 {
    rates
        .iter()
        .enumerate()
        .map(|(i, x)| pair_utility(factors.valuations.get(i, platform), *x, alpha))
        .sum()
}

/// `C_i(x_i) = sum_n l_{i,n} x_{i,n} + pi_i e_i x_{i,n}^2`
pub fn poi_cost(rates: &[f64], factors: &RandomFactors, poi: usize) -> f64 {
    let q = factors.quadratic_cost(poi);
    rates
        .iter()
        .enumerate()
        .map(|(n, x)| pair_cost(factors.privacy_sensitivities.get(poi, n), q, *x))
        .sum()
}

pub fn social_welfare(rates: &RateMatrix, factors: &RandomFactors, alpha: f64) -> f64 {
    let utility: f64 = (0..rates.platforms())
        .map(|n| platform_utility(&rates.column(n), factors, n, alpha))
        .sum();
    let cost: f64 = (0..rates.pois())
        .map(|i| poi_cost(rates.row(i), factors, i))
        .sum();
    utility - cost
}

/// A platform's per-period objective at fixed prices:
/// `U(x) - sum_i lambda_i x_i - (q / V) A(x)`.
pub(crate) struct PlatformObjective<'a> {
    pub valuations: Vec<f64>,
    pub prices: &'a [f64],
    pub queue_over_v: f64,
    pub age: &'a AgeModel,
    pub alpha: f64,
}

impl Objective for PlatformObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for (i, xi) in x.iter().enumerate() {
            v += pair_utility(self.valuations[i], *xi, self.alpha) - self.prices[i] * xi;
        }
        if self.queue_over_v != 0.0 {
            v -= self.queue_over_v * self.age.age_unchecked(x);
        }
        v
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        if self.queue_over_v != 0.0 {
            self.age.gradient_unchecked(x, grad);
        } else {
            grad.fill(0.0);
        }
        for (i, g) in grad.iter_mut().enumerate() {
            *g = pair_marginal_utility(self.valuations[i], x[i], self.alpha)
                - self.prices[i]
                - self.queue_over_v * *g;
        }
    }

    fn curvature(&self, x: &[f64], out: &mut [f64]) {
        if self.queue_over_v != 0.0 {
            self.age.second_derivatives_unchecked(x, out);
        } else {
            out.fill(0.0);
        }
        for (i, h) in out.iter_mut().enumerate() {
            *h = pair_utility_curvature(self.valuations[i], x[i], self.alpha) + self.queue_over_v * *h;
        }
    }
}

/// The rates a platform would truthfully request at the announced prices.
///
/// `start` seeds the ascent; it only affects how many steps are needed.
pub fn platform_best_response(
    prices: &[f64],
    factors: &RandomFactors,
    platform: usize,
    queue_over_v: f64,
    age: &AgeModel,
    alpha: f64,
    start: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if prices.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::invalid("platform best response needs positive prices"));
    }
    if !(queue_over_v >= 0.0) {
        return Err(Error::invalid("queue_over_v must be nonnegative"));
    }
    let objective = PlatformObjective {
        valuations: factors.valuations.column(platform),
        prices,
        queue_over_v,
        age,
        alpha,
    };
    let region = age.region();
    let default_start;
    let start = match start {
        Some(s) => s,
        None => {
            let l = age.limits();
            default_start = vec![0.5 * (l.rate_floor + l.rate_ceiling); prices.len()];
            &default_start
        }
    };
    Ok(solver::maximize(&objective, &region, start, AGENT_SETTINGS)?.x)
}

/// The rates a PoI would truthfully supply: per pair,
/// `argmax_y lambda y - l y - pi e y^2` on the rate box.
pub fn poi_best_response(prices: &[f64], factors: &RandomFactors, poi: usize, limits: &RateLimits) -> Vec<f64> {
    let q = factors.quadratic_cost(poi);
    prices
        .iter()
        .enumerate()
        .map(|(n, lambda)| {
            let l = factors.privacy_sensitivities.get(poi, n);
            let y = if q > 0.0 {
                (lambda - l) / (2.0 * q)
            } else if *lambda > l {
                limits.rate_ceiling
            } else {
                limits.rate_floor
            };
            y.clamp(limits.rate_floor, limits.rate_ceiling)
        })
        .collect()
}

/// Maximizes a concave 1-D function on `[lo, hi]` by bisection on its
/// nonincreasing derivative.
pub fn maximize_by_derivative_bisection(derivative: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    if derivative(lo) <= 0.0 {
        return lo;
    }
    if derivative(hi) >= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if derivative(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// PoI best response through the marginal cost alone, without using the
/// quadratic form. Works for any convex increasing pair cost.
pub fn poi_best_response_by_bisection(
    prices: &[f64],
    factors: &RandomFactors,
    poi: usize,
    limits: &RateLimits,
) -> Vec<f64> {
    let q = factors.quadratic_cost(poi);
    prices
        .iter()
        .enumerate()
        .map(|(n, lambda)| {
            let l = factors.privacy_sensitivities.get(poi, n);
            maximize_by_derivative_bisection(
                |y| lambda - pair_marginal_cost(l, q, y),
                limits.rate_floor,
                limits.rate_ceiling,
            )
        })
        .collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream per (seed, period, factor kind, poi, platform), so
/// the order in which entries are drawn never matters.
fn entry_rng(seed: u64, period: usize, kind: u64, poi: usize, platform: usize) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for part in [period as u64, kind, poi as u64, platform as u64] {
        h = splitmix(h ^ part);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Normal(mean, std) conditioned on being nonnegative.
fn truncated_normal(rng: &mut impl Rng, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean.max(0.0);
    }
    let normal = Normal::new(mean, std).expect("std is finite and positive");
    for _ in 0..10_000 {
        let v = normal.sample(rng);
        if v >= 0.0 {
            return v;
        }
    }
    0.0
}

const KIND_VALUATION: u64 = 1;
const KIND_PRIVACY: u64 = 2;

/// Draws period `t`'s factors. Deterministic in `(scenario.rng_seed, t)`.
pub fn sample_factors(scenario: &MarketScenario, period: usize, prices: &PriceSeries) -> RandomFactors {
    let (pois, platforms) = (scenario.num_pois, scenario.num_platforms);
    let seed = scenario.rng_seed;
    let draw = |kind: u64, means: &[Vec<f64>], std: f64| {
        PairMatrix::from_fn(pois, platforms, |i, n| {
            let mut rng = entry_rng(seed, period, kind, i, n);
            truncated_normal(&mut rng, means[i][n], std)
        })
    };
    let raw = prices.price_at(period);
    let scale = scenario.effective_price_scale(prices);
    let electricity_price = (0..pois)
        .map(|i| {
            let m = scenario
                .poi_price_multipliers
                .as_ref()
                .map_or(1.0, |m| m[i]);
            raw * scale * m
        })
        .collect();
    RandomFactors {
        valuations: draw(KIND_VALUATION, &scenario.valuation_means, scenario.valuation_std),
        privacy_sensitivities: draw(KIND_PRIVACY, &scenario.privacy_means, scenario.privacy_std),
        electricity_price,
        energy: scenario.energy_levels.clone(),
    }
}

/// Every platform and PoI bidding truthfully from its private information.
///
/// Each round, platforms solve their per-period problem at the announced
/// prices, PoIs theirs, and both submit the bids that make the allocation
/// rule return those best responses.
pub struct TruthfulAgents<'a> {
    factors: &'a RandomFactors,
    ages: &'a [AgeModel],
    queue_over_v: &'a [f64],
    alpha: f64,
    limits: RateLimits,
    last_platform_rates: PairMatrix,
    last_x_hat: Option<RateMatrix>,
    last_y_hat: Option<RateMatrix>,
}

impl<'a> TruthfulAgents<'a> {
    pub fn new(
        factors: &'a RandomFactors,
        ages: &'a [AgeModel],
        queue_over_v: &'a [f64],
        alpha: f64,
        limits: RateLimits,
    ) -> Self {
        let pois = factors.valuations.pois();
        let platforms = factors.valuations.platforms();
        let mid = 0.5 * (limits.rate_floor + limits.rate_ceiling);
        Self {
            factors,
            ages,
            queue_over_v,
            alpha,
            limits,
            last_platform_rates: PairMatrix::filled(pois, platforms, mid),
            last_x_hat: None,
            last_y_hat: None,
        }
    }

    /// Best responses behind the most recent bids.
    pub fn last_best_responses(&self) -> Option<(&RateMatrix, &RateMatrix)> {
        Some((self.last_x_hat.as_ref()?, self.last_y_hat.as_ref()?))
    }
}

impl BidProvider for TruthfulAgents<'_> {
    fn bids(&mut self, prices: &PriceMatrix) -> Result<BidSet> {
        let (pois, platforms) = (prices.pois(), prices.platforms());
        let mut x_hat = PairMatrix::zeros(pois, platforms);
        for n in 0..platforms {
            let start = self.last_platform_rates.column(n);
            let x = platform_best_response(
                &prices.column(n),
                self.factors,
                n,
                self.queue_over_v[n],
                &self.ages[n],
                self.alpha,
                Some(&start),
            )?;
            x_hat.set_column(n, &x);
        }
        let mut y_hat = PairMatrix::zeros(pois, platforms);
        for i in 0..pois {
            y_hat.set_row(i, &poi_best_response(prices.row(i), self.factors, i, &self.limits));
        }
        self.last_platform_rates = x_hat.clone();
        let (x_hat, y_hat): (RateMatrix, RateMatrix) = (x_hat.into(), y_hat.into());
        let bids = truthful_bids(&x_hat, &y_hat, prices);
        self.last_x_hat = Some(x_hat);
        self.last_y_hat = Some(y_hat);
        Ok(bids)
    }
}
