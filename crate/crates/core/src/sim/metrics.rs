//! Cost and network statistics over simulated episodes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lti::LinkSelection;

use super::episode::{EpisodeTrace, LoopTrace, Schedule};

/// Which price a loop is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pricing {
    /// The link the loop asked for.
    Requested,
    /// The link it was given.
    Allocated,
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }
}

/// Quadratic cost plus link prices realized by one loop.
pub fn local_cost(trace: &LoopTrace, pricing: Pricing) -> f64 {
    let running: f64 = trace
        .steps
        .iter()
        .map(|s| {
            s.stage_cost
                + match pricing {
                    Pricing::Requested => s.requested_price,
                    Pricing::Allocated => s.allocated_price,
                }
        })
        .sum();
    running + trace.terminal_cost
}

/// Fleet average of the allocated-price local costs.
pub fn fleet_cost(trace: &EpisodeTrace) -> f64 {
    trace.loops.iter().map(|l| local_cost(l, Pricing::Allocated)).sum::<f64>() / trace.loops.len() as f64
}

/// Average excess cost over the contention-free shadow run at the same
/// noise. Traces must be paired by seed and replication.
pub fn social_cost(regime: &EpisodeTrace, shadow: &EpisodeTrace) -> Result<f64> {
    if regime.seed != shadow.seed || regime.replication != shadow.replication {
        return Err(Error::internal(format!(
            "social cost pairs replication ({}, {}) with shadow ({}, {})",
            regime.seed, regime.replication, shadow.seed, shadow.replication
        )));
    }
    if regime.loops.len() != shadow.loops.len() {
        return Err(Error::internal("regime and shadow traces differ in loop count"));
    }
    let n = regime.loops.len() as f64;
    Ok(regime
        .loops
        .iter()
        .zip(&shadow.loops)
        .map(|(r, s)| local_cost(r, Pricing::Allocated) - local_cost(s, Pricing::Requested))
        .sum::<f64>()
        / n)
}

/// Per-replication social cost for matched trace lists.
pub fn social_costs(regime: &[EpisodeTrace], shadow: &[EpisodeTrace]) -> Result<Vec<f64>> {
    if regime.len() != shadow.len() {
        return Err(Error::internal("regime and shadow replication counts differ"));
    }
    regime.iter().zip(shadow).map(|(r, s)| social_cost(r, s)).collect()
}

/// `util[d][t]`: share of all transmissions up to and including step `t`
/// that went over link `d`.
pub fn link_utilization(allocated: &[Vec<LinkSelection>], num_links: usize) -> Vec<Vec<f64>> {
    let n = allocated.len();
    let horizon = allocated.first().map_or(0, |a| a.len());
    let mut counts = vec![0usize; num_links];
    let mut util = vec![vec![0.0; horizon]; num_links];
    for t in 0..horizon {
        for links in allocated {
            counts[links[t].0] += 1;
        }
        for d in 0..num_links {
            util[d][t] = counts[d] as f64 / (n * (t + 1)) as f64;
        }
    }
    util
}

/// Running mean of `|allocated delay − requested delay|` per loop, up to and
/// including each step.
pub fn deviation_per_loop(schedule: &Schedule) -> Vec<Vec<f64>> {
    schedule
        .requested
        .iter()
        .zip(&schedule.allocated)
        .map(|(req, got)| {
            let mut total = 0.0;
            req.iter()
                .zip(got)
                .enumerate()
                .map(|(t, (r, g))| {
                    total += r.delay().abs_diff(g.delay()) as f64;
                    total / (t + 1) as f64
                })
                .collect()
        })
        .collect()
}

/// Fleet average of [`deviation_per_loop`].
pub fn average_deviation(schedule: &Schedule) -> Vec<f64> {
    let per_loop = deviation_per_loop(schedule);
    let n = per_loop.len() as f64;
    let horizon = per_loop.first().map_or(0, |v| v.len());
    (0..horizon).map(|t| per_loop.iter().map(|v| v[t]).sum::<f64>() / n).collect()
}
