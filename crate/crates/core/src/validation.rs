//! Self-checks run by `ltd validate` and the acceptance suite.
//!
//! Each suite returns its raw measurements together with the [`Check`]s
//! they imply, so callers can print, store or assert on either.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::age::{AgeModel, AgeParams, RateLimits};
use crate::auction::{run_auction, AuctionParams, P_FLOOR};
use crate::error::{Error, Result};
use crate::horizon::{aggregate_metrics, run_horizon_observed, PeriodView, Summary};
use crate::io::config::RunConfig;
use crate::io::prices::PriceSeries;
use crate::market::{
    pair_cost, pair_marginal_cost, pair_marginal_utility, pair_utility, pair_utility_curvature, sample_factors,
    MarketScenario, RandomFactors, TOL_AGENT,
};
use crate::matrix::{PairMatrix, PriceMatrix, RateMatrix};
use crate::oracles::{centralized_virtual_optimum, des_average_age, grid_bruteforce, sstar_from_factors, SStarEstimate};

pub const DES_TOLERANCE: f64 = 0.02;
pub const DES_EVENTS: u64 = 10_000_000;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const GRADIENT_POINTS: usize = 1000;
pub const TRIANGLE_GRID_STEP: f64 = 1e-3;
pub const TRIANGLE_INSTANCES: usize = 20;
/// Bids rounded through `s / lambda` and `lambda^2 / p` may miss exact
/// budget balance by this many ulps of the payment totals.
const BUDGET_ROUNDING_ULPS: f64 = 8.0;
pub const PARTICIPATION_TOLERANCE: f64 = 1e-9;
/// Rates this close to a bound, or sums this close to the utilization cap,
/// are treated as boundary solutions.
const INTERIOR_MARGIN: f64 = 1e-6;

pub fn triangle_tolerance() -> f64 {
    TRIANGLE_GRID_STEP.max(1e-2)
}

/// One named pass/fail line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// The measured quantity compared against `tolerance`.
    pub statistic: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `statistic <= tolerance`.
    pub fn at_most(name: &str, statistic: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed: statistic <= tolerance,
            statistic,
            tolerance,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {:.6e} (tolerance {:.3e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.statistic,
            self.tolerance,
            self.detail
        )
    }
}

/// A deliberate defect for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// Scale the first component of every analytic age gradient by `1 + 1e-3`.
    Gradient,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(Fault::Gradient),
            other => Err(Error::invalid(format!("unknown fault {other:?}; expected \"gradient\""))),
        }
    }
}

// Discrete-event agreement.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesPoint {
    pub serving_rate: f64,
    pub input_rates: Vec<f64>,
    pub utilization: f64,
    pub formula: f64,
    pub simulated: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesSuite {
    pub events: u64,
    pub points: Vec<DesPoint>,
}

impl DesSuite {
    pub fn max_relative_error(&self) -> f64 {
        self.points.iter().map(|p| p.relative_error).fold(0.0, f64::max)
    }

    pub fn check(&self) -> Check {
        let worst = self
            .points
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error));
        let detail = worst.map_or(String::new(), |p| {
            format!(
                "worst at r={} rates={:?} (utilization {:.2}): formula {:.5}, simulated {:.5}",
                p.serving_rate, p.input_rates, p.utilization, p.formula, p.simulated
            )
        });
        Check::at_most("des_agreement", self.max_relative_error(), DES_TOLERANCE, detail)
    }
}

/// Ten platforms with utilization evenly spread over `[0.1, 0.7]`, cycling
/// through one, two and three sources with unequal shares.
pub fn des_sweep_points() -> Vec<AgeParams> {
    let serving_rate = 1.25;
    (0..10)
        .map(|k| {
            let utilization = 0.1 + 0.6 * k as f64 / 9.0;
            let sources = 1 + k % 3;
            let weights: Vec<f64> = (1..=sources).map(|j| j as f64).collect();
            let total: f64 = weights.iter().sum();
            let rates = weights.iter().map(|w| utilization * serving_rate * w / total).collect();
            AgeParams::new(serving_rate, rates)
        })
        .collect()
}

pub fn des_suite(events: u64, seed: u64) -> Result<DesSuite> {
    let points = des_sweep_points()
        .into_par_iter()
        .enumerate()
        .map(|(k, p)| {
            let formula = crate::age::stationary_age(&p)?;
            let simulated = des_average_age(p.serving_rate, &p.input_rates, events, seed.wrapping_add(k as u64))?.mean;
            Ok(DesPoint {
                utilization: p.input_rates.iter().sum::<f64>() / p.serving_rate,
                serving_rate: p.serving_rate,
                relative_error: (formula - simulated).abs() / simulated,
                input_rates: p.input_rates,
                formula,
                simulated,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DesSuite { events, points })
}

// Finite-difference derivatives.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSuite {
    pub points: usize,
    /// Largest `|analytic - fd| / max(|analytic|, 1)` per family.
    pub age_gradient: f64,
    pub age_second_derivative: f64,
    pub utility_derivative: f64,
    pub cost_derivative: f64,
}

impl GradientSuite {
    pub fn checks(&self) -> Vec<Check> {
        let detail = format!("{} random points, central differences", self.points);
        [
            ("age_gradient", self.age_gradient),
            ("age_second_derivative", self.age_second_derivative),
            ("utility_derivative", self.utility_derivative),
            ("cost_derivative", self.cost_derivative),
        ]
        .into_iter()
        .map(|(name, err)| Check::at_most(name, err, GRADIENT_TOLERANCE, detail.clone()))
        .collect()
    }
}

/// A NaN on either side counts as an infinite error.
fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    let e = (analytic - numeric).abs() / analytic.abs().max(1.0);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5 * x.abs().max(1e-3);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn random_age_point(rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
    let serving_rate = rng.random_range(0.5..10.0);
    let sources = rng.random_range(1..=5);
    let utilization = rng.random_range(0.05..0.9);
    let weights: Vec<f64> = (0..sources).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let rates = weights
        .iter()
        .map(|w| (utilization * serving_rate * w / total).clamp(1e-3, 0.99))
        .collect();
    (serving_rate, rates)
}

pub fn gradient_suite(points: usize, seed: u64, fault: Option<Fault>) -> Result<GradientSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suite = GradientSuite {
        points,
        age_gradient: 0.0,
        age_second_derivative: 0.0,
        utility_derivative: 0.0,
        cost_derivative: 0.0,
    };
    for _ in 0..points {
        let (serving_rate, rates) = random_age_point(&mut rng);
        let model = AgeModel::new(serving_rate, RateLimits::default())?;
        let mut gradient = model.gradient(&rates)?;
        if fault == Some(Fault::Gradient) {
            gradient[0] *= 1.0 + 1e-3;
        }
        let second = model.second_derivatives(&rates)?;
        for i in 0..rates.len() {
            let moved = |v: f64| {
                let mut x = rates.clone();
                x[i] = v;
                x
            };
            // Perturbed points stay inside the rate box and below the cap.
            let fd = central_difference(|v| model.age(&moved(v)).unwrap_or(f64::NAN), rates[i]);
            let fd2 = central_difference(|v| model.gradient(&moved(v)).map_or(f64::NAN, |g| g[i]), rates[i]);
            suite.age_gradient = suite.age_gradient.max(scaled_error(gradient[i], fd));
            suite.age_second_derivative = suite.age_second_derivative.max(scaled_error(second[i], fd2));
        }

        let sigma = rng.random_range(0.1..5.0);
        let alpha = rng.random_range(0.05..0.95);
        let x = rng.random_range(1e-3..1.0);
        let du = central_difference(|v| pair_utility(sigma, v, alpha), x);
        let d2u = central_difference(|v| pair_marginal_utility(sigma, v, alpha), x);
        suite.utility_derivative = suite
            .utility_derivative
            .max(scaled_error(pair_marginal_utility(sigma, x, alpha), du))
            .max(scaled_error(-pair_utility_curvature(sigma, x, alpha), d2u));

        let l = rng.random_range(0.0..3.0);
        let quad = rng.random_range(0.0..2.0);
        let dc = central_difference(|v| pair_cost(l, quad, v), x);
        suite.cost_derivative = suite.cost_derivative.max(scaled_error(pair_marginal_cost(l, quad, x), dc));
    }
    Ok(suite)
}

// Oracle triangle.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleInstance {
    pub pois: usize,
    pub platforms: usize,
    pub weights: Vec<f64>,
    pub grid: RateMatrix,
    pub central: RateMatrix,
    pub ltd: RateMatrix,
    pub auction_iterations: usize,
}

impl TriangleInstance {
    /// Largest pairwise max-norm distance among the three allocations.
    pub fn disagreement(&self) -> f64 {
        self.grid
            .max_abs_diff(&self.central)
            .max(self.central.max_abs_diff(&self.ltd))
            .max(self.grid.max_abs_diff(&self.ltd))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleSuite {
    pub instances: Vec<TriangleInstance>,
}

impl TriangleSuite {
    pub fn max_disagreement(&self) -> f64 {
        self.instances.iter().map(TriangleInstance::disagreement).fold(0.0, f64::max)
    }

    pub fn check(&self) -> Check {
        Check::at_most(
            "oracle_triangle",
            self.max_disagreement(),
            triangle_tolerance(),
            format!(
                "{} instances, grid step {TRIANGLE_GRID_STEP}, pairwise max-norm",
                self.instances.len()
            ),
        )
    }
}

/// A market with at most four pairs and at most two PoIs, its factors, and
/// per-platform age weights.
pub fn random_tiny_instance(index: usize, rng: &mut ChaCha8Rng) -> (MarketScenario, RandomFactors, Vec<f64>) {
    const SHAPES: [(usize, usize); 6] = [(1, 1), (2, 1), (1, 2), (2, 2), (1, 3), (1, 4)];
    let (pois, platforms) = SHAPES[index % SHAPES.len()];
    let mut scenario = MarketScenario::one_platform_two_pois();
    scenario.num_pois = pois;
    scenario.num_platforms = platforms;
    scenario.alpha = rng.random_range(0.3..0.7);
    scenario.serving_rates = (0..platforms).map(|_| rng.random_range(1.0..4.0)).collect();
    scenario.freshness_thresholds = vec![1.0; platforms];
    let mut matrix = |lo: f64, hi: f64| PairMatrix::from_fn(pois, platforms, |_, _| rng.random_range(lo..hi));
    let valuations = matrix(0.5, 2.5);
    let privacy_sensitivities = matrix(0.1, 1.5);
    scenario.valuation_means = valuations.rows();
    scenario.privacy_means = privacy_sensitivities.rows();
    scenario.energy_levels = (0..pois).map(|_| rng.random_range(0.2..1.5)).collect();
    let factors = RandomFactors {
        valuations,
        privacy_sensitivities,
        electricity_price: vec![1.0; pois],
        energy: scenario.energy_levels.clone(),
    };
    let weights = (0..platforms).map(|_| rng.random_range(0.0..1.5)).collect();
    (scenario, factors, weights)
}

pub fn triangle_suite(instances: usize, seed: u64) -> Result<TriangleSuite> {
    let drawn: Vec<_> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..instances).map(|k| random_tiny_instance(k, &mut rng)).collect()
    };
    let params = AuctionParams {
        max_iters: 50_000,
        ..AuctionParams::default()
    };
    let instances = drawn
        .into_par_iter()
        .map(|(scenario, factors, weights)| {
            scenario.validate()?;
            let grid = grid_bruteforce(&factors, &weights, 1.0, &scenario, TRIANGLE_GRID_STEP)?;
            let central = centralized_virtual_optimum(&factors, &weights, 1.0, &scenario)?;
            let ages = scenario.age_models()?;
            let initial = PriceMatrix(PairMatrix::filled(scenario.num_pois, scenario.num_platforms, 1.0));
            let outcome = run_auction(&scenario, &ages, &factors, &weights, &initial, &params)?;
            Ok(TriangleInstance {
                pois: scenario.num_pois,
                platforms: scenario.num_platforms,
                weights,
                grid,
                central,
                ltd: outcome.x,
                auction_iterations: outcome.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TriangleSuite { instances })
}

// Per-period audits over horizon runs.

/// Worst per-period values seen in one `(V, seed)` horizon run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAudit {
    pub v: f64,
    pub seed: u64,
    pub periods: usize,
    /// Largest `|budget| - gamma * sum(lambda)`; nonpositive when balanced.
    pub budget_excess: f64,
    /// Periods that ended with a zero residual, and how many of those were
    /// not balanced up to rounding.
    pub zero_residual_periods: usize,
    pub zero_residual_imbalances: usize,
    pub min_poi_payoff: f64,
    /// Largest `|bid - stationarity value| / (tol_agent (1 + |bid|))` over
    /// interior pairs; at most 1 when truthful.
    pub truthfulness_ratio: f64,
    pub interior_bids: usize,
    pub summary: Summary,
}

fn audit_period(view: &PeriodView<'_>, gamma: f64, alpha: f64, audit: &mut CellAudit) -> Result<()> {
    let outcome = view.outcome;
    let record = view.record;
    audit.periods += 1;
    audit.budget_excess = audit
        .budget_excess
        .max(record.broker_budget.abs() - gamma * record.price_sum);
    if outcome.residual == 0.0 {
        audit.zero_residual_periods += 1;
        let scale: f64 = outcome.platform_payments.iter().chain(&outcome.poi_reimbursements).map(|v| v.abs()).sum();
        if record.broker_budget.abs() > BUDGET_ROUNDING_ULPS * f64::EPSILON * scale {
            audit.zero_residual_imbalances += 1;
        }
    }
    for p in &record.poi_payoffs {
        audit.min_poi_payoff = audit.min_poi_payoff.min(*p);
    }

    let prices = &outcome.prices;
    let (pois, platforms) = (prices.pois(), prices.platforms());
    let limits = view.ages[0].limits();
    let inside = |r: f64| r > limits.rate_floor + INTERIOR_MARGIN && r < limits.rate_ceiling - INTERIOR_MARGIN;
    let ratio = |bid: f64, value: f64| (bid - value).abs() / (TOL_AGENT * (1.0 + bid.abs()));
    for n in 0..platforms {
        let x_hat: Vec<f64> = (0..pois)
            .map(|i| outcome.bids.platform_bids.get(i, n) / prices.get(i, n))
            .collect();
        let model = &view.ages[n];
        if x_hat.iter().sum::<f64>() >= model.limits().rho_cap * model.serving_rate() - INTERIOR_MARGIN {
            continue;
        }
        let age_gradient = model.gradient(&x_hat)?;
        for i in 0..pois {
            if !inside(x_hat[i]) || prices.get(i, n) <= P_FLOOR {
                continue;
            }
            let marginal = pair_marginal_utility(view.factors.valuations.get(i, n), x_hat[i], alpha)
                - view.queue_over_v[n] * age_gradient[i];
            audit.truthfulness_ratio = audit
                .truthfulness_ratio
                .max(ratio(outcome.bids.platform_bids.get(i, n), x_hat[i] * marginal));
            audit.interior_bids += 1;
        }
    }
    for i in 0..pois {
        for n in 0..platforms {
            let lambda = prices.get(i, n);
            let p = outcome.bids.poi_bids.get(i, n);
            let y_hat = lambda / p;
            if !inside(y_hat) {
                continue;
            }
            let marginal = pair_marginal_cost(
                view.factors.privacy_sensitivities.get(i, n),
                view.factors.quadratic_cost(i),
                y_hat,
            );
            audit.truthfulness_ratio = audit.truthfulness_ratio.max(ratio(p * y_hat, marginal));
            audit.interior_bids += 1;
        }
    }
    Ok(())
}

/// One horizon run with every period audited.
pub fn audit_cell(config: &RunConfig, prices: &PriceSeries, v: f64, seed: u64) -> Result<CellAudit> {
    let scenario = config.scenario_for_seed(seed);
    let gamma = config.gamma;
    let mut audit = CellAudit {
        v,
        seed,
        periods: 0,
        budget_excess: f64::NEG_INFINITY,
        zero_residual_periods: 0,
        zero_residual_imbalances: 0,
        min_poi_payoff: f64::INFINITY,
        truthfulness_ratio: 0.0,
        interior_bids: 0,
        summary: empty_summary(),
    };
    let records = run_horizon_observed(&scenario, prices, &config.horizon_params(v), |view| {
        audit_period(&view, gamma, scenario.alpha, &mut audit)
    })?;
    audit.summary = aggregate_metrics(&records, &scenario.freshness_thresholds)?;
    Ok(audit)
}

fn empty_summary() -> Summary {
    Summary {
        periods: 0,
        time_average_welfare: 0.0,
        running_average_ages: Vec::new(),
        final_average_ages: Vec::new(),
        first_satisfied: Vec::new(),
        first_all_satisfied: None,
        cumulative_platform_payoffs: Vec::new(),
        cumulative_poi_payoffs: Vec::new(),
        max_abs_budget: 0.0,
        mean_iterations: 0.0,
        max_iterations: 0,
    }
}

/// Every `(V, seed)` cell of `config`, audited, in `V`-major order.
pub fn audit_sweep(config: &RunConfig, prices: &PriceSeries) -> Result<Vec<CellAudit>> {
    config.validate()?;
    let cells: Vec<(f64, u64)> = config
        .v_values
        .iter()
        .flat_map(|v| config.seeds.iter().map(move |s| (*v, *s)))
        .collect();
    cells
        .par_iter()
        .map(|&(v, seed)| audit_cell(config, prices, v, seed).map_err(|e| e.in_cell(v, seed)))
        .collect()
}

pub fn budget_check(cells: &[CellAudit]) -> Check {
    let excess = cells.iter().map(|c| c.budget_excess).fold(f64::NEG_INFINITY, f64::max);
    let imbalances: usize = cells.iter().map(|c| c.zero_residual_imbalances).sum();
    let zero: usize = cells.iter().map(|c| c.zero_residual_periods).sum();
    let periods: usize = cells.iter().map(|c| c.periods).sum();
    let mut check = Check::at_most(
        "budget_balance",
        excess,
        0.0,
        format!(
            "max(|budget| - gamma*sum(lambda)) over {periods} periods; {zero} zero-residual periods, {imbalances} unbalanced"
        ),
    );
    check.passed &= imbalances == 0;
    check
}

pub fn participation_check(cells: &[CellAudit]) -> Check {
    let min_payoff = cells.iter().map(|c| c.min_poi_payoff).fold(f64::INFINITY, f64::min);
    let min_cumulative = cells
        .iter()
        .flat_map(|c| c.summary.cumulative_poi_payoffs.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let mut check = Check::at_most(
        "voluntary_participation",
        -min_payoff,
        PARTICIPATION_TOLERANCE,
        format!("negated minimum per-period PoI payoff; minimum cumulative PoI payoff {min_cumulative:.6}"),
    );
    check.passed &= min_cumulative >= 0.0;
    check
}

pub fn truthfulness_check(cells: &[CellAudit]) -> Check {
    let ratio = cells.iter().map(|c| c.truthfulness_ratio).fold(0.0, f64::max);
    let bids: usize = cells.iter().map(|c| c.interior_bids).sum();
    Check::at_most(
        "truthfulness",
        ratio,
        1.0,
        format!("worst |bid - stationarity value| / (tol_agent (1 + |bid|)) over {bids} interior bids"),
    )
}

// Welfare and freshness trade-off across V.

/// S* over factors drawn from every seed of `config`: `per_seed`
/// realizations per seed, evenly spaced over the horizon.
pub fn pooled_sstar(config: &RunConfig, prices: &PriceSeries, per_seed: usize) -> Result<SStarEstimate> {
    let horizon = config.scenario.horizon;
    let per_seed = per_seed.clamp(1, horizon);
    let factors: Vec<RandomFactors> = config
        .seeds
        .iter()
        .flat_map(|seed| {
            let scenario = config.scenario_for_seed(*seed);
            (0..per_seed)
                .map(move |k| sample_factors(&scenario, k * horizon / per_seed, prices))
                .collect::<Vec<_>>()
        })
        .collect();
    sstar_from_factors(&config.scenario, &factors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VRow {
    pub v: f64,
    pub mean_welfare: f64,
    /// 95% normal-approximation half width over seeds.
    pub welfare_half_width: f64,
    /// `S* - mean_welfare`
    pub gap: f64,
    /// Largest final running-average age over threshold, across seeds and
    /// platforms.
    pub max_age_ratio: f64,
    pub seeds_satisfied: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tradeoff {
    pub sstar: SStarEstimate,
    pub rows: Vec<VRow>,
    /// Seeds whose first all-satisfied period decreases somewhere along
    /// increasing `V` (never satisfied counts as later than any period).
    pub first_satisfaction_inversions: Vec<u64>,
}

pub const AGE_SLACK: f64 = 1.05;

impl Tradeoff {
    pub fn welfare_nondecreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_welfare >= w[0].mean_welfare)
    }

    pub fn gap_shrinking(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].gap <= w[0].gap)
    }

    /// Dual gap plus the welfare half width at the largest `V`.
    pub fn final_gap_allowance(&self) -> f64 {
        self.sstar.duality_gap + self.rows.last().map_or(0.0, |r| r.welfare_half_width)
    }

    pub fn checks(&self) -> Vec<Check> {
        let last = self.rows.last();
        let welfare: Vec<String> = self.rows.iter().map(|r| format!("V={}: {:.5}", r.v, r.mean_welfare)).collect();
        let gaps: Vec<String> = self.rows.iter().map(|r| format!("V={}: {:.5}", r.v, r.gap)).collect();
        let max_ratio = self.rows.iter().map(|r| r.max_age_ratio).fold(0.0, f64::max);
        let mut gap_check = Check::at_most(
            "welfare_gap",
            last.map_or(f64::INFINITY, |r| r.gap),
            self.final_gap_allowance(),
            format!("S* {:.5}; gaps {}", self.sstar.estimate, gaps.join(", ")),
        );
        gap_check.passed &= self.gap_shrinking();
        vec![
            Check {
                name: "welfare_monotone_in_v".into(),
                passed: self.welfare_nondecreasing(),
                statistic: self.rows.windows(2).map(|w| w[0].mean_welfare - w[1].mean_welfare).fold(f64::NEG_INFINITY, f64::max),
                tolerance: 0.0,
                detail: welfare.join(", "),
            },
            Check::at_most(
                "final_age_within_slack",
                max_ratio,
                AGE_SLACK,
                "largest final running-average age over threshold",
            ),
            Check::at_most(
                "first_satisfaction_monotone_in_v",
                self.first_satisfaction_inversions.len() as f64,
                0.0,
                format!("seeds with an inversion: {:?}", self.first_satisfaction_inversions),
            ),
            gap_check,
        ]
    }
}

fn mean_and_half_width(values: &[f64]) -> (f64, f64) {
    crate::io::runs::mean_and_half_width(values).unwrap_or((f64::NAN, 0.0))
}

/// Summarizes `(V, seed, summary)` cells by `V` against a precomputed S*
/// estimate.
pub fn tradeoff<'a>(
    cells: impl IntoIterator<Item = (f64, u64, &'a Summary)>,
    thresholds: &[f64],
    sstar: SStarEstimate,
) -> Result<Tradeoff> {
    let cells: Vec<(f64, u64, &Summary)> = cells.into_iter().collect();
    let mut vs: Vec<f64> = cells.iter().map(|c| c.0).collect();
    vs.sort_by(f64::total_cmp);
    vs.dedup();
    if vs.is_empty() {
        return Err(Error::invalid("no cells to summarize"));
    }
    let rows = vs
        .iter()
        .map(|&v| {
            let at_v: Vec<&Summary> = cells.iter().filter(|c| c.0 == v).map(|c| c.2).collect();
            let welfare: Vec<f64> = at_v.iter().map(|s| s.time_average_welfare).collect();
            let (mean_welfare, welfare_half_width) = mean_and_half_width(&welfare);
            let max_age_ratio = at_v
                .iter()
                .flat_map(|s| s.final_average_ages.iter().zip(thresholds).map(|(a, t)| a / t))
                .fold(0.0, f64::max);
            VRow {
                v,
                mean_welfare,
                welfare_half_width,
                gap: sstar.estimate - mean_welfare,
                max_age_ratio,
                seeds_satisfied: at_v.iter().filter(|s| s.first_all_satisfied.is_some()).count(),
            }
        })
        .collect();

    let mut seeds: Vec<u64> = cells.iter().map(|c| c.1).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let first_satisfaction_inversions = seeds
        .into_iter()
        .filter(|&seed| {
            let firsts: Vec<usize> = vs
                .iter()
                .filter_map(|&v| cells.iter().find(|c| c.0 == v && c.1 == seed))
                .map(|c| c.2.first_all_satisfied.unwrap_or(usize::MAX))
                .collect();
            firsts.windows(2).any(|w| w[1] < w[0])
        })
        .collect();
    Ok(Tradeoff {
        sstar,
        rows,
        first_satisfaction_inversions,
    })
}

// The full report.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub des_events: u64,
    pub gradient_points: usize,
    pub triangle_instances: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            des_events: DES_EVENTS,
            gradient_points: GRADIENT_POINTS,
            triangle_instances: TRIANGLE_INSTANCES,
            seed: 2020,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config_hash: String,
    pub options: ValidationOptions,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Runs every suite. The budget, participation and truthfulness audits
/// cover each `(V, seed)` cell of `config`.
pub fn validate(config: &RunConfig, prices: &PriceSeries, options: &ValidationOptions) -> Result<ValidationReport> {
    config.validate()?;
    let mut checks = vec![triangle_suite(options.triangle_instances, options.seed)?.check()];
    checks.extend(gradient_suite(options.gradient_points, options.seed, options.fault)?.checks());
    checks.push(des_suite(options.des_events, options.seed)?.check());
    let cells = audit_sweep(config, prices)?;
    checks.push(budget_check(&cells));
    checks.push(participation_check(&cells));
    checks.push(truthfulness_check(&cells));
    Ok(ValidationReport {
        config_hash: config.hash()?,
        options: options.clone(),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn des_points_cover_the_utilization_range() {
        let points = des_sweep_points();
        assert_eq!(points.len(), 10);
        let u: Vec<f64> = points
            .iter()
            .map(|p| p.input_rates.iter().sum::<f64>() / p.serving_rate)
            .collect();
        assert!((u[0] - 0.1).abs() < 1e-12 && (u[9] - 0.7).abs() < 1e-12);
        assert!(points.iter().flat_map(|p| &p.input_rates).all(|r| *r <= 1.0));
        assert!(points.iter().any(|p| p.input_rates.len() == 3));
    }

    #[test]
    fn gradient_suite_passes_and_detects_the_fault() {
        let clean = gradient_suite(200, 1, None).unwrap();
        assert!(clean.checks().iter().all(|c| c.passed), "{:?}", clean);
        let faulty = gradient_suite(200, 1, Some(Fault::Gradient)).unwrap();
        let failed: Vec<_> = faulty.checks().into_iter().filter(|c| !c.passed).map(|c| c.name).collect();
        assert_eq!(failed, vec!["age_gradient".to_string()]);
    }

    #[test]
    fn fault_names_parse() {
        assert_eq!("gradient".parse::<Fault>().unwrap(), Fault::Gradient);
        assert!("budget".parse::<Fault>().is_err());
    }

    #[test]
    fn tiny_instances_respect_the_grid_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..12 {
            let (s, f, w) = random_tiny_instance(k, &mut rng);
            assert!(s.num_pois * s.num_platforms <= 4 && s.num_pois <= 2);
            assert_eq!(w.len(), s.num_platforms);
            assert_eq!(f.valuations.pois(), s.num_pois);
            s.validate().unwrap();
        }
    }

    #[test]
    fn short_audit_is_clean() {
        let mut config = RunConfig::default_experiment();
        config.scenario.horizon = 30;
        config.seeds = vec![1];
        config.v_values = vec![1.0];
        let prices = config.load_prices(None).unwrap();
        let cells = audit_sweep(&config, &prices).unwrap();
        assert_eq!(cells[0].periods, 30);
        assert!(cells[0].interior_bids > 0);
        for check in [budget_check(&cells), participation_check(&cells), truthfulness_check(&cells)] {
            assert!(check.passed, "{check}");
        }
    }
}
