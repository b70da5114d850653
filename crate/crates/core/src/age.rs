//! Stationary age of information for a platform modelled as a multi-source
//! FCFS M/M/1 queue.
//!
//! With serving rate `r` and per-source rates `x_i`, let `rho_i = x_i / r`
//! and `rho_-i = sum_{j != i} rho_j`. The platform age is the mean over
//! sources of
//!
//! ```text
//! (1/r) [ 1/rho_i + 1/(1 - rho_-i)
//!         + rho_i^2 (1 - rho_i rho_-i) / ((1 - rho_i)(1 - rho_-i)^3) ]
//! ```
//!
//! The expression diverges as any rate goes to zero and is only meaningful
//! for a stable queue, so every evaluation checks the rates against
//! [`RateLimits`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{self, Objective, Region, Settings};

pub const RATE_FLOOR: f64 = 1e-4;
pub const RATE_CEILING: f64 = 1.0;
pub const RHO_CAP: f64 = 0.95;

/// Admissible rates: each in `[rate_floor, rate_ceiling]`, and total
/// utilization at most `rho_cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimits {
    pub rate_floor: f64,
    pub rate_ceiling: f64,
    pub rho_cap: f64,
}

impl Default for RateLimits {
    fn default() -> Self {
        Self {
            rate_floor: RATE_FLOOR,
            rate_ceiling: RATE_CEILING,
            rho_cap: RHO_CAP,
        }
    }
}

impl RateLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_floor > 0.0 && self.rate_floor <= self.rate_ceiling) {
            return Err(Error::invalid(format!(
                "rate bounds [{}, {}] must satisfy 0 < floor <= ceiling",
                self.rate_floor, self.rate_ceiling
            )));
        }
        if !(self.rho_cap > 0.0 && self.rho_cap < 1.0) {
            return Err(Error::invalid(format!(
                "rho_cap {} must lie in (0, 1)",
                self.rho_cap
            )));
        }
        Ok(())
    }

    /// Feasible set for one platform's input rates.
    pub fn region(&self, serving_rate: f64) -> Region {
        Region::boxed(self.rate_floor, self.rate_ceiling).with_cap(self.rho_cap * serving_rate)
    }

    /// Plain rate box with no utilization cap (the PoI side).
    pub fn rate_box(&self) -> Region {
        Region::boxed(self.rate_floor, self.rate_ceiling)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgeParams {
    pub serving_rate: f64,
    pub input_rates: Vec<f64>,
}

impl AgeParams {
    pub fn new(serving_rate: f64, input_rates: Vec<f64>) -> Self {
        Self {
            serving_rate,
            input_rates,
        }
    }
}

/// Stationary time-average age of one platform.
pub fn stationary_age(params: &AgeParams) -> Result<f64> {
    AgeModel::new(params.serving_rate, RateLimits::default())?.age(&params.input_rates)
}

/// Partial derivatives of [`stationary_age`] with respect to each input rate.
pub fn age_gradient(params: &AgeParams) -> Result<Vec<f64>> {
    AgeModel::new(params.serving_rate, RateLimits::default())?.gradient(&params.input_rates)
}

/// Rates in `[lower, upper]^pois` (and under the utilization cap) that
/// minimize the platform age.
pub fn age_minimizing_rates(serving_rate: f64, pois: usize, lower: f64, upper: f64) -> Result<Vec<f64>> {
    let limits = RateLimits {
        rate_floor: lower,
        rate_ceiling: upper,
        ..RateLimits::default()
    };
    AgeModel::new(serving_rate, limits)?.minimizing_rates(pois)
}

/// Age evaluator for one platform with a fixed serving rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeModel {
    serving_rate: f64,
    limits: RateLimits,
}

/// Per-source building blocks: value and partial derivatives of the
/// bracketed term with respect to `a = rho_i` and `b = rho_-i`.
struct SourceTerm {
    f: f64,
    fa: f64,
    fb: f64,
    faa: f64,
    fbb: f64,
}

impl SourceTerm {
    fn eval(a: f64, b: f64) -> Self {
        let ia = 1.0 / (1.0 - a);
        let ib = 1.0 / (1.0 - b);
        let ib3 = ib * ib * ib;
        let ib4 = ib3 * ib;
        let ib5 = ib4 * ib;

        // g(a, b) = u(a, b) / (1 - b)^3 with u = (a^2 - a^3 b) / (1 - a)
        let num = a * a - a * a * a * b;
        let num1 = 2.0 * a - 3.0 * a * a * b;
        let num2 = 2.0 - 6.0 * a * b;
        let u = num * ia;
        let u1 = num1 * ia + num * ia * ia;
        let u2 = num2 * ia + 2.0 * num1 * ia * ia + 2.0 * num * ia * ia * ia;

        // g(a, b) = c(a) * w(b) with c = a^2 / (1 - a), w = (1 - ab) / (1 - b)^3
        let c = a * a * ia;
        let w1 = -a * ib3 + 3.0 * (1.0 - a * b) * ib4;
        let w2 = -6.0 * a * ib4 + 12.0 * (1.0 - a * b) * ib5;

        Self {
            f: 1.0 / a + ib + u * ib3,
            fa: -1.0 / (a * a) + u1 * ib3,
            fb: ib * ib + c * w1,
            faa: 2.0 / (a * a * a) + u2 * ib3,
            fbb: 2.0 * ib3 + c * w2,
        }
    }
}

impl AgeModel {
    pub fn new(serving_rate: f64, limits: RateLimits) -> Result<Self> {
        if !(serving_rate.is_finite() && serving_rate > 0.0) {
            return Err(Error::AgeDomain(format!(
                "serving rate must be positive, got {serving_rate}"
            )));
        }
        limits.validate()?;
        Ok(Self {
            serving_rate,
            limits,
        })
    }

    pub fn serving_rate(&self) -> f64 {
        self.serving_rate
    }

    pub fn limits(&self) -> RateLimits {
        self.limits
    }

    pub fn region(&self) -> Region {
        self.limits.region(self.serving_rate)
    }

    pub fn check(&self, rates: &[f64]) -> Result<()> {
        if rates.is_empty() {
            return Err(Error::AgeDomain("no input sources".into()));
        }
        let RateLimits {
            rate_floor,
            rate_ceiling,
            rho_cap,
        } = self.limits;
        for (i, &x) in rates.iter().enumerate() {
            if !(x >= rate_floor && x <= rate_ceiling) {
                return Err(Error::AgeDomain(format!(
                    "rate {x} of source {i} outside [{rate_floor}, {rate_ceiling}]"
                )));
            }
        }
        let total: f64 = rates.iter().sum::<f64>() / self.serving_rate;
        if total > rho_cap * (1.0 + 1e-12) {
            return Err(Error::AgeDomain(format!(
                "total utilization {total:.6} exceeds cap {rho_cap}"
            )));
        }
        Ok(())
    }

    fn terms<'a>(&self, rates: &'a [f64]) -> impl Iterator<Item = SourceTerm> + 'a {
        let r = self.serving_rate;
        let total: f64 = rates.iter().sum::<f64>() / r;
        rates.iter().map(move |&x| {
            let a = x / r;
            SourceTerm::eval(a, (total - a).max(0.0))
        })
    }

    pub fn age(&self, rates: &[f64]) -> Result<f64> {
        self.check(rates)?;
        Ok(self.age_unchecked(rates))
    }

    pub fn gradient(&self, rates: &[f64]) -> Result<Vec<f64>> {
        self.check(rates)?;
        let mut g = vec![0.0; rates.len()];
        self.gradient_unchecked(rates, &mut g);
        Ok(g)
    }

    /// Diagonal of the Hessian of the age.
    pub fn second_derivatives(&self, rates: &[f64]) -> Result<Vec<f64>> {
        self.check(rates)?;
        let mut h = vec![0.0; rates.len()];
        self.second_derivatives_unchecked(rates, &mut h);
        Ok(h)
    }

    pub(crate) fn age_unchecked(&self, rates: &[f64]) -> f64 {
        let sum: f64 = self.terms(rates).map(|t| t.f).sum();
        sum / (rates.len() as f64 * self.serving_rate)
    }

    pub(crate) fn gradient_unchecked(&self, rates: &[f64], out: &mut [f64]) {
        let r = self.serving_rate;
        let scale = 1.0 / (rates.len() as f64 * r * r);
        let mut fb_total = 0.0;
        for (o, t) in out.iter_mut().zip(self.terms(rates)) {
            fb_total += t.fb;
            *o = t.fa - t.fb;
        }
        for o in out.iter_mut() {
            *o = (*o + fb_total) * scale;
        }
    }

    pub(crate) fn second_derivatives_unchecked(&self, rates: &[f64], out: &mut [f64]) {
        let r = self.serving_rate;
        let scale = 1.0 / (rates.len() as f64 * r * r * r);
        let mut fbb_total = 0.0;
        for (o, t) in out.iter_mut().zip(self.terms(rates)) {
            fbb_total += t.fbb;
            *o = t.faa - t.fbb;
        }
        for o in out.iter_mut() {
            *o = (*o + fbb_total) * scale;
        }
    }

    pub fn minimizing_rates(&self, pois: usize) -> Result<Vec<f64>> {
        let region = self.region();
        if !region.is_feasible_for(pois) {
            return Err(Error::AgeDomain(format!(
                "{pois} sources at the rate floor already exceed the utilization cap"
            )));
        }
        let mid = 0.5 * (self.limits.rate_floor + self.limits.rate_ceiling);
        let start = region.project_unweighted(&vec![mid; pois]);
        let objective = AgeObjective { model: self };
        let sol = solver::maximize(
            &objective,
            &region,
            &start,
            Settings {
                tolerance: 1e-10,
                max_steps: 10_000,
            },
        )?;
        Ok(sol.x)
    }
}

struct AgeObjective<'a> {
    model: &'a AgeModel,
}

impl Objective for AgeObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        -self.model.age_unchecked(x)
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.model.gradient_unchecked(x, grad);
        grad.iter_mut().for_each(|g| *g = -*g);
    }
    fn curvature(&self, x: &[f64], out: &mut [f64]) {
        self.model.second_derivatives_unchecked(x, out);
    }
}
