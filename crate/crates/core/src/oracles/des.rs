//! Event-driven simulation of a multi-source FCFS M/M/1 platform.
//!
//! Each source sends updates as a Poisson process; a single exponential
//! server processes them in arrival order. A source's age at time `tau` is
//! `tau` minus the generation time of its freshest completed update. The
//! age is piecewise linear between completions, so trapezoids integrate it
//! exactly.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DES_UTILIZATION: f64 = 0.9;
pub const MIN_DES_EVENTS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DesEventKind {
    Arrival { source: usize },
    ServiceCompletion { source: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesEvent {
    pub kind: DesEventKind,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesAges {
    pub per_source: Vec<f64>,
    pub mean: f64,
    pub events: u64,
    pub simulated_time: f64,
}

struct InService {
    source: usize,
    generated: f64,
    done_at: f64,
}

/// FCFS single-server queue fed by independent Poisson sources.
pub struct FcfsQueue {
    rng: ChaCha8Rng,
    arrival: Exp<f64>,
    service: Exp<f64>,
    cumulative: Vec<f64>,
    now: f64,
    next_arrival: f64,
    waiting: VecDeque<(usize, f64)>,
    busy: Option<InService>,
}

impl FcfsQueue {
    pub fn new(serving_rate: f64, input_rates: &[f64], seed: u64) -> Result<Self> {
        let total: f64 = input_rates.iter().sum();
        if !(serving_rate > 0.0) || input_rates.iter().any(|x| !(*x >= 0.0)) || !(total > 0.0) {
            return Err(Error::invalid("need a positive serving rate and nonnegative input rates with a positive sum"));
        }
        let mut acc = 0.0;
        let cumulative = input_rates
            .iter()
            .map(|x| {
                acc += x / total;
                acc
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arrival = Exp::new(total).map_err(|e| Error::invalid(e.to_string()))?;
        let service = Exp::new(serving_rate).map_err(|e| Error::invalid(e.to_string()))?;
        let next_arrival = arrival.sample(&mut rng);
        Ok(Self {
            rng,
            arrival,
            service,
            cumulative,
            now: 0.0,
            next_arrival,
            waiting: VecDeque::new(),
            busy: None,
        })
    }

    fn pick_source(&mut self) -> usize {
        let u: f64 = self.rng.random();
        self.cumulative
            .iter()
            .position(|c| u < *c)
            .unwrap_or(self.cumulative.len() - 1)
    }

    fn start_service(&mut self, source: usize, generated: f64) {
        let done_at = self.now + self.service.sample(&mut self.rng);
        self.busy = Some(InService {
            source,
            generated,
            done_at,
        });
    }

    /// Advances to the next event. Completions report the generation time
    /// of the update that finished.
    pub fn step(&mut self) -> (DesEvent, Option<f64>) {
        let completion = self.busy.as_ref().map(|b| b.done_at);
        match completion {
            Some(done) if done <= self.next_arrival => {
                let finished = self.busy.take().expect("busy server");
                self.now = done;
                if let Some((source, generated)) = self.waiting.pop_front() {
                    self.start_service(source, generated);
                }
                (
                    DesEvent {
                        kind: DesEventKind::ServiceCompletion { source: finished.source },
                        timestamp: done,
                    },
                    Some(finished.generated),
                )
            }
            _ => {
                self.now = self.next_arrival;
                self.next_arrival = self.now + self.arrival.sample(&mut self.rng);
                let source = self.pick_source();
                if self.busy.is_none() {
                    self.start_service(source, self.now);
                } else {
                    self.waiting.push_back((source, self.now));
                }
                (
                    DesEvent {
                        kind: DesEventKind::Arrival { source },
                        timestamp: self.now,
                    },
                    None,
                )
            }
        }
    }
}

/// The first `count` events of a simulation run.
pub fn des_event_log(serving_rate: f64, input_rates: &[f64], count: usize, seed: u64) -> Result<Vec<DesEvent>> {
    let mut q = FcfsQueue::new(serving_rate, input_rates, seed)?;
    Ok((0..count).map(|_| q.step().0).collect())
}

/// Time-average age per source over `horizon_events` arrivals and
/// completions. Every source starts fresh at time 0.
pub fn des_average_age(serving_rate: f64, input_rates: &[f64], horizon_events: u64, seed: u64) -> Result<DesAges> {
    let utilization = input_rates.iter().sum::<f64>() / serving_rate;
    if !(utilization <= MAX_DES_UTILIZATION) {
        return Err(Error::invalid(format!(
            "utilization {utilization:.4} exceeds {MAX_DES_UTILIZATION}"
        )));
    }
    if horizon_events < MIN_DES_EVENTS {
        return Err(Error::invalid(format!("horizon of {horizon_events} events is below {MIN_DES_EVENTS}")));
    }
    let mut queue = FcfsQueue::new(serving_rate, input_rates, seed)?;
    let sources = input_rates.len();
    let mut freshest = vec![0.0; sources];
    let mut since = vec![0.0; sources];
    let mut area = vec![0.0; sources];
    let mut now = 0.0;
    for _ in 0..horizon_events {
        let (event, generated) = queue.step();
        now = event.timestamp;
        if let (DesEventKind::ServiceCompletion { source }, Some(g)) = (event.kind, generated) {
            let (t0, g0) = (since[source], freshest[source]);
            area[source] += 0.5 * (now - t0) * ((now - g0) + (t0 - g0));
            since[source] = now;
            freshest[source] = g;
        }
    }
    for s in 0..sources {
        let (t0, g0) = (since[s], freshest[s]);
        area[s] += 0.5 * (now - t0) * ((now - g0) + (t0 - g0));
    }
    let per_source: Vec<f64> = area.iter().map(|a| a / now).collect();
    let mean = per_source.iter().sum::<f64>() / sources as f64;
    Ok(DesAges {
        per_source,
        mean,
        events: horizon_events,
        simulated_time: now,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_log_is_time_ordered_and_fcfs() {
        let log = des_event_log(2.0, &[0.5, 0.7], 20_000, 5).unwrap();
        assert!(log.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        let arrivals: Vec<usize> = log
            .iter()
            .filter_map(|e| match e.kind {
                DesEventKind::Arrival { source } => Some(source),
                _ => None,
            })
            .collect();
        let completions: Vec<usize> = log
            .iter()
            .filter_map(|e| match e.kind {
                DesEventKind::ServiceCompletion { source } => Some(source),
                _ => None,
            })
            .collect();
        assert!(completions.len() <= arrivals.len());
        assert_eq!(&arrivals[..completions.len()], &completions[..]);
    }

    #[test]
    fn preconditions_are_enforced() {
        assert!(des_average_age(1.0, &[0.95], 2_000_000, 1).is_err());
        assert!(des_average_age(1.0, &[0.5], 1000, 1).is_err());
    }

    #[test]
    fn single_source_age_is_close_to_closed_form() {
        let ages = des_average_age(1.0, &[0.5], 2_000_000, 11).unwrap();
        assert!((ages.mean - 3.5).abs() / 3.5 < 0.03, "{}", ages.mean);
    }

    #[test]
    fn starved_source_age_grows_with_horizon() {
        let short = des_average_age(1.0, &[1e-9, 0.5], 1_000_000, 2).unwrap();
        let long = des_average_age(1.0, &[1e-9, 0.5], 4_000_000, 2).unwrap();
        assert!(long.per_source[0] > 3.0 * short.per_source[0]);
        assert!(short.per_source[0] > 1e5);
    }
}
