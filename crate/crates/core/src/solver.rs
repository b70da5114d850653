//! Projected gradient ascent for smooth concave objectives over a capped box.
//!
//! The feasible set is `{ x : lower <= x_i <= upper, sum(x) <= sum_cap }`,
//! which covers both the plain rate box and the per-platform utilization
//! cap. Steps are scaled by the objective's curvature diagonal (a diagonal
//! metric keeps the projection cheap) and accepted by Armijo backtracking
//! along the projection arc.

use crate::error::{Error, Result};

pub(crate) trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    /// Negated Hessian diagonal. Non-positive or non-finite entries are
    /// replaced by 1.
    fn curvature(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub lower: f64,
    pub upper: f64,
    pub sum_cap: Option<f64>,
}

impl Region {
    pub fn boxed(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            sum_cap: None,
        }
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.sum_cap = Some(cap);
        self
    }

    pub fn is_feasible_for(&self, dim: usize) -> bool {
        self.lower <= self.upper && self.sum_cap.is_none_or(|c| self.lower * dim as f64 <= c)
    }

    /// Weighted projection: argmin sum_i w_i (z_i - v_i)^2 over the region.
    pub fn project(&self, v: &[f64], weights: &[f64], out: &mut [f64]) {
        let lo = |_: usize| self.lower;
        let hi = |_: usize| self.upper;
        project_capped(v, weights, lo, hi, self.sum_cap, out);
    }

    pub fn project_unweighted(&self, v: &[f64]) -> Vec<f64> {
        let w = vec![1.0; v.len()];
        let mut out = vec![0.0; v.len()];
        self.project(v, &w, &mut out);
        out
    }

    fn cap_active(&self, x: &[f64]) -> bool {
        match self.sum_cap {
            Some(c) => x.iter().sum::<f64>() >= c - 1e-12 * c.abs().max(1.0),
            None => false,
        }
    }

    /// Sup-norm of the gradient projected onto the tangent cone at `x`.
    /// Zero exactly at first-order stationary points.
    pub fn stationarity(&self, x: &[f64], grad: &[f64]) -> f64 {
        let lo = |i: usize| if x[i] <= self.lower { 0.0 } else { f64::NEG_INFINITY };
        let hi = |i: usize| if x[i] >= self.upper { 0.0 } else { f64::INFINITY };
        let cap = self.cap_active(x).then_some(0.0);
        let mut d = vec![0.0; x.len()];
        let w = vec![1.0; x.len()];
        project_capped(grad, &w, lo, hi, cap, &mut d);
        d.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// z_i = clip(v_i - theta / w_i, lo_i, hi_i) with the smallest theta >= 0
/// such that sum(z) <= cap.
fn project_capped(
    v: &[f64],
    weights: &[f64],
    lo: impl Fn(usize) -> f64,
    hi: impl Fn(usize) -> f64,
    cap: Option<f64>,
    out: &mut [f64],
) {
    let fill = |theta: f64, out: &mut [f64]| -> f64 {
        let mut s = 0.0;
        for (i, z) in out.iter_mut().enumerate() {
            *z = (v[i] - theta / weights[i]).clamp(lo(i), hi(i));
            s += *z;
        }
        s
    };
    let total = fill(0.0, out);
    let Some(cap) = cap else { return };
    if total <= cap {
        return;
    }
    // Bracket: at theta_hi every coordinate sits at or below what it needs.
    let mut theta_lo = 0.0;
    let mut theta_hi = 1.0;
    while fill(theta_hi, out) > cap {
        theta_hi *= 2.0;
        if !theta_hi.is_finite() {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (theta_lo + theta_hi);
        if mid <= theta_lo || mid >= theta_hi {
            break;
        }
        if fill(mid, out) > cap {
            theta_lo = mid;
        } else {
            theta_hi = mid;
        }
    }
    fill(theta_hi, out);
}

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub tolerance: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub steps: usize,
    pub residual: f64,
}

pub(crate) fn maximize(
    obj: &impl Objective,
    region: &Region,
    start: &[f64],
    settings: Settings,
) -> Result<Solution> {
    let dim = start.len();
    if !region.is_feasible_for(dim) {
        return Err(Error::invalid(format!("empty feasible region {region:?}")));
    }
    let mut x = region.project_unweighted(start);
    let mut grad = vec![0.0; dim];
    let mut curv = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    let mut target = vec![0.0; dim];
    let mut value = obj.value(&x);
    let mut residual = f64::INFINITY;

    for step in 0..=settings.max_steps {
        obj.gradient(&x, &mut grad);
        residual = region.stationarity(&x, &grad);
        if residual <= settings.tolerance {
            return Ok(Solution { x, steps: step, residual });
        }
        if step == settings.max_steps {
            break;
        }
        obj.curvature(&x, &mut curv);
        for h in curv.iter_mut() {
            if !(h.is_finite() && *h > 0.0) {
                *h = 1.0;
            }
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            for i in 0..dim {
                target[i] = x[i] + t * grad[i] / curv[i];
            }
            region.project(&target, &curv, &mut trial);
            let ascent: f64 = (0..dim).map(|i| grad[i] * (trial[i] - x[i])).sum();
            if ascent <= 0.0 {
                break;
            }
            // Below the resolution of the objective value the sufficient
            // increase test is noise; the full scaled step is taken instead.
            let unresolved = t == 1.0 && ascent <= 16.0 * f64::EPSILON * value.abs().max(1.0);
            let trial_value = obj.value(&trial);
            if unresolved || trial_value >= value + 1e-4 * ascent {
                x.copy_from_slice(&trial);
                value = trial_value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // The objective can no longer be improved in floating point;
            // accept if we are within rounding of stationarity.
            let slack = 1e3 * settings.tolerance;
            if residual <= slack {
                return Ok(Solution { x, steps: step, residual });
            }
            return Err(Error::SolverNonConvergence {
                iterations: step,
                residual,
            });
        }
    }
    Err(Error::SolverNonConvergence {
        iterations: settings.max_steps,
        residual,
    })
}
