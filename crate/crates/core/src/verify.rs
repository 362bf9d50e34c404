//! Brute-force cross-checks of the MILP solver on generated programs.

use crate::error::Result;
use crate::formulation::{error_cost_table, tolerance_window, Encoding, LoopSpec, ProgramSpec, Formulation};
use crate::lqg::riccati_backward;
use crate::lti::{LinkSelection, NetworkModel, NoiseStream, PlantModel};
use crate::milp::{verify_against_enumeration, LinearConstraint, MilpProblem, ENUMERATION_LIMIT};

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub passed: usize,
    /// Indices of the cases that disagreed.
    pub failures: Vec<usize>,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.cases > 0
    }
}

pub fn run_suite(name: &'static str, problems: &[MilpProblem]) -> Result<SuiteReport> {
    let mut failures = Vec::new();
    for (i, p) in problems.iter().enumerate() {
        if !verify_against_enumeration(p)? {
            failures.push(i);
        }
    }
    Ok(SuiteReport {
        name,
        cases: problems.len(),
        passed: problems.len() - failures.len(),
        failures,
    })
}

/// Random programs with integer coefficients, a mix of equality and
/// inequality rows, and between 1 and `max_vars` variables.
pub fn random_binary_programs(seed: u64, count: usize, max_vars: usize) -> Vec<MilpProblem> {
    let mut rng = NoiseStream::from_seed(seed);
    let mut pick = |lo: f64, hi: f64| lo + (hi - lo) * rng.uniform();
    (0..count)
        .map(|case| {
            let n = 1 + (pick(0.0, max_vars as f64) as usize).min(max_vars - 1);
            let rows = pick(0.0, 7.0) as usize;
            let eq_rows = case % 3;
            let mut p = MilpProblem::new(n).with_objective((0..n).map(|_| pick(-10.0, 10.0).round()).collect());
            for r in 0..rows {
                let terms: Vec<(usize, f64)> = (0..n)
                    .filter_map(|j| (pick(0.0, 1.0) < 0.6).then(|| (j, pick(-3.0, 7.0).round())))
                    .collect();
                let rhs = pick(0.0, 10.0).round();
                if r < eq_rows {
                    p.eq_constraints.push(LinearConstraint::new(terms, rhs.min(3.0)));
                } else {
                    p.le_constraints.push(LinearConstraint::new(terms, rhs));
                }
            }
            p
        })
        .collect()
}

fn random_network(rng: &mut NoiseStream, max_delay: usize, capacities: Vec<usize>) -> NetworkModel {
    // Strictly cheaper with every extra step of delay.
    let mut prices: Vec<f64> = (0..=max_delay).map(|_| 1.0 + (rng.uniform() * 3.0).round()).collect();
    for d in (0..max_delay).rev() {
        prices[d] += prices[d + 1];
    }
    NetworkModel::new(prices, capacities).expect("valid network")
}

fn random_plant(rng: &mut NoiseStream) -> PlantModel {
    let a = 0.4 + 1.1 * rng.uniform();
    let r = 0.05 + rng.uniform();
    PlantModel::scalar(a, 1.0, 1.0, 1.0, r, 0.5 + rng.uniform())
}

fn random_history(rng: &mut NoiseStream, k: usize, max_delay: usize) -> Vec<LinkSelection> {
    (0..k)
        .map(|_| LinkSelection(((max_delay + 1) as f64 * rng.uniform()) as usize))
        .collect()
}

/// Every single-loop delay-control program, over small horizons, delays,
/// start times and both encodings, that fits the enumeration limit.
pub fn delay_control_programs(seed: u64) -> Result<Vec<MilpProblem>> {
    let mut rng = NoiseStream::from_seed(seed);
    let mut out = Vec::new();
    for max_delay in 0..=2 {
        for horizon in 1..=5 {
            let plant = random_plant(&mut rng);
            let net = random_network(&mut rng, max_delay, vec![1; max_delay + 1]);
            let sol = riccati_backward(&plant, horizon)?;
            let costs = error_cost_table(&plant, &sol, max_delay)?;
            for (k, encoding) in (0..horizon).flat_map(|k| [(k, Encoding::Products), (k, Encoding::Staleness)]) {
                let history = random_history(&mut rng, k, max_delay);
                let spec = ProgramSpec {
                    k,
                    horizon,
                    net: &net,
                    loops: vec![LoopSpec {
                        history: &history,
                        allowed: vec![vec![true; max_delay + 1]; horizon - k],
                        costs: Some(&costs),
                        weight: 1.0,
                    }],
                    capacity: false,
                    encoding,
                };
                let f = Formulation::build(&spec)?;
                if f.problem.num_vars <= ENUMERATION_LIMIT {
                    out.push(f.problem);
                }
            }
        }
    }
    Ok(out)
}

/// Two- and three-loop allocation programs with tolerance windows and
/// binding capacities, kept when they fit the enumeration limit.
pub fn allocation_programs(seed: u64, count: usize) -> Result<Vec<MilpProblem>> {
    let mut rng = NoiseStream::from_seed(seed);
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < count && attempts < 50 * count {
        attempts += 1;
        let max_delay = 1 + (2.0 * rng.uniform()) as usize;
        let loops = 2 + (2.0 * rng.uniform()) as usize;
        let horizon = 1 + (2.0 * rng.uniform()) as usize;
        let k = (horizon as f64 * rng.uniform()) as usize;
        let caps: Vec<usize> = (0..=max_delay).map(|_| 1 + (2.0 * rng.uniform()) as usize).collect();
        if caps.iter().sum::<usize>() < loops {
            continue;
        }
        let net = random_network(&mut rng, max_delay, caps);
        let plants: Vec<PlantModel> = (0..loops).map(|_| random_plant(&mut rng)).collect();
        let tables = plants
            .iter()
            .map(|p| error_cost_table(p, &riccati_backward(p, horizon)?, max_delay))
            .collect::<Result<Vec<_>>>()?;
        let histories: Vec<_> = (0..loops).map(|_| random_history(&mut rng, k, max_delay)).collect();
        let specs = (0..loops)
            .map(|i| {
                let alpha = (2.0 * rng.uniform()) as usize;
                let beta = (2.0 * rng.uniform()) as usize;
                let allowed = (k..horizon)
                    .map(|_| {
                        let req = LinkSelection(((max_delay + 1) as f64 * rng.uniform()) as usize);
                        tolerance_window(req, alpha, beta, max_delay)
                    })
                    .collect();
                LoopSpec {
                    history: &histories[i],
                    allowed,
                    costs: Some(&tables[i]),
                    weight: 1.0 / loops as f64,
                }
            })
            .collect();
        let encoding = if out.len() % 2 == 0 { Encoding::Products } else { Encoding::Staleness };
        let spec = ProgramSpec {
            k,
            horizon,
            net: &net,
            loops: specs,
            capacity: true,
            encoding,
        };
        let f = Formulation::build(&spec)?;
        if f.problem.num_vars <= ENUMERATION_LIMIT && f.problem.num_vars > 0 {
            out.push(f.problem);
        }
    }
    Ok(out)
}

/// The three enumeration suites run by `ncsim verify`.
pub fn enumeration_suites(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        run_suite("random binary programs", &random_binary_programs(seed, 200, 10))?,
        run_suite("delay-control programs", &delay_control_programs(seed)?)?,
        run_suite("allocation programs", &allocation_programs(seed, 60)?)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_respect_limits() {
        let r = random_binary_programs(1, 50, 10);
        assert_eq!(r.len(), 50);
        assert!(r.iter().all(|p| p.num_vars >= 1 && p.num_vars <= 10));
        let d = delay_control_programs(1).unwrap();
        assert!(d.len() > 20);
        assert!(d.iter().all(|p| p.num_vars <= ENUMERATION_LIMIT));
        let a = allocation_programs(1, 10).unwrap();
        assert_eq!(a.len(), 10);
    }
}
