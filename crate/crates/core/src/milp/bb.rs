//! Depth-first branch-and-bound followed by a lexicographic polish.
//!
//! The first pass certifies the optimal value: it branches on the
//! lowest-index fractional variable, explores the 0-branch first and prunes
//! any node whose relaxation bound cannot beat the incumbent. The second pass
//! walks variables in index order, trying 1 before 0, and keeps only subtrees
//! whose bound stays within tolerance of that value. Its first leaf is the
//! lexicographically greatest optimal assignment.

use std::time::Instant;

use super::decompose::solve_by_components;
use super::lp::{LpStatus, Tableau};
use super::{objective_tolerance, MilpProblem, MilpSolution, SolveStatus, SolverOptions, INT_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeOutcome {
    Infeasible,
    /// Relaxation bound did not beat the incumbent.
    Pruned,
    Integral,
    Branched,
}

/// One branch-and-bound node of the first pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    /// Variables pinned on the path from the root.
    pub fixings: Vec<(usize, u8)>,
    /// Lower bound proved at this node; `None` when its relaxation is empty.
    pub bound: Option<f64>,
    pub outcome: NodeOutcome,
}

struct Node {
    id: usize,
    parent: Option<usize>,
    fixings: Vec<(usize, u8)>,
    parent_bound: f64,
}

pub fn solve(p: &MilpProblem) -> Result<MilpSolution> {
    solve_with(p, &SolverOptions::default())
}

fn infeasible(nodes: usize, node_log: Vec<NodeRecord>) -> MilpSolution {
    MilpSolution {
        status: SolveStatus::Infeasible,
        assignment: Vec::new(),
        objective_value: f64::INFINITY,
        gap: 0.0,
        nodes,
        node_log,
    }
}

fn rounded(x: &[f64]) -> Vec<u8> {
    x.iter().map(|&v| u8::from(v > 0.5)).collect()
}

fn first_fractional(x: &[f64]) -> Option<usize> {
    x.iter().position(|&v| (v - v.round()).abs() > INT_TOL)
}

pub fn solve_with(p: &MilpProblem, opts: &SolverOptions) -> Result<MilpSolution> {
    p.validate()?;
    if !opts.record_nodes {
        if let Some(sol) = solve_by_components(p, opts)? {
            return Ok(sol);
        }
    }
    let started = Instant::now();
    let time_limit = opts.effective_time_limit(p);
    let deadline = time_limit.map(|d| started + d);
    let Some(mut tab) = Tableau::new(p) else {
        return Ok(infeasible(0, Vec::new()));
    };
    let n = tab.num_structural();

    let mut log = Vec::new();
    let mut incumbent: Option<(Vec<u8>, f64)> = None;
    let mut stack = vec![Node {
        id: 0,
        parent: None,
        fixings: Vec::new(),
        parent_bound: f64::NEG_INFINITY,
    }];
    let mut next_id = 1;
    let mut nodes = 0;
    let mut timed_out_bound: Option<f64> = None;

    while let Some(node) = stack.pop() {
        let inc_value = incumbent.as_ref().map(|(_, z)| *z);
        let cutoff = inc_value.map_or(f64::INFINITY, |z| z - objective_tolerance(z));
        if node.parent_bound >= cutoff {
            if opts.record_nodes {
                log.push(NodeRecord {
                    id: node.id,
                    parent: node.parent,
                    fixings: node.fixings,
                    bound: Some(node.parent_bound),
                    outcome: NodeOutcome::Pruned,
                });
            }
            continue;
        }
        if deadline.is_some_and(|dl| Instant::now() >= dl) {
            timed_out_bound = Some(node.parent_bound);
            stack.push(node);
            break;
        }
        nodes += 1;
        tab.set_bounds(node.fixings.iter().copied());
        let status = tab.solve(cutoff, deadline)?;
        let (bound, outcome) = match status {
            LpStatus::TimeOut => {
                timed_out_bound = Some(node.parent_bound);
                stack.push(node);
                break;
            }
            LpStatus::Infeasible => (None, NodeOutcome::Infeasible),
            LpStatus::Cutoff(z) => (Some(z), NodeOutcome::Pruned),
            LpStatus::Optimal(z) if z >= cutoff => (Some(z), NodeOutcome::Pruned),
            LpStatus::Optimal(z) => {
                let x = tab.structural_values();
                let branch_var = match first_fractional(x) {
                    Some(j) => Some(j),
                    None => {
                        let cand = rounded(x);
                        if p.is_feasible(&cand) {
                            let value = p.evaluate(&cand);
                            if inc_value.is_none_or(|zi| value < zi - objective_tolerance(zi)) {
                                incumbent = Some((cand, value));
                            }
                            None
                        } else {
                            // Rounding broke a row; keep splitting on free variables.
                            let pinned: Vec<bool> = {
                                let mut v = vec![false; n];
                                for &(j, _) in &node.fixings {
                                    v[j] = true;
                                }
                                v
                            };
                            (0..n).find(|&j| !pinned[j])
                        }
                    }
                };
                match branch_var {
                    None => (Some(z), NodeOutcome::Integral),
                    Some(j) => {
                        for v in [1u8, 0u8] {
                            let mut fixings = node.fixings.clone();
                            fixings.push((j, v));
                            stack.push(Node {
                                id: next_id,
                                parent: Some(node.id),
                                fixings,
                                parent_bound: z,
                            });
                            next_id += 1;
                        }
                        (Some(z), NodeOutcome::Branched)
                    }
                }
            }
        };
        if opts.record_nodes {
            log.push(NodeRecord {
                id: node.id,
                parent: node.parent,
                fixings: node.fixings,
                bound,
                outcome,
            });
        }
    }

    if let Some(current) = timed_out_bound {
        let Some((assignment, value)) = incumbent else {
            return Err(Error::SolverNoIncumbent { vars: n });
        };
        let open = stack
            .iter()
            .map(|nd| nd.parent_bound)
            .fold(current, f64::min)
            .min(value);
        return Ok(MilpSolution {
            status: SolveStatus::TimeLimitIncumbent,
            assignment,
            objective_value: value,
            gap: ((value - open) / value.abs().max(1.0)).max(0.0),
            nodes,
            node_log: log,
        });
    }

    let Some((mut assignment, mut value)) = incumbent else {
        return Ok(infeasible(nodes, log));
    };

    if time_limit.is_none() {
        if let Some(best) = lexicographic_polish(p, &mut tab, value, &mut nodes)? {
            value = p.evaluate(&best);
            assignment = best;
        }
    }

    Ok(MilpSolution {
        status: SolveStatus::Optimal,
        assignment,
        objective_value: value,
        gap: 0.0,
        nodes,
        node_log: log,
    })
}

/// Finds the lexicographically greatest assignment whose objective is within
/// tolerance of `z_star`.
fn lexicographic_polish(
    p: &MilpProblem,
    tab: &mut Tableau,
    z_star: f64,
    nodes: &mut usize,
) -> Result<Option<Vec<u8>>> {
    let n = tab.num_structural();
    let cutoff = z_star + objective_tolerance(z_star);
    let mut stack: Vec<Vec<u8>> = vec![Vec::new()];
    while let Some(mut prefix) = stack.pop() {
        *nodes += 1;
        tab.set_bounds(prefix.iter().enumerate().map(|(j, &v)| (j, v)));
        match tab.solve(cutoff, None)? {
            LpStatus::Optimal(z) if z <= cutoff => {}
            _ => continue,
        }
        let x = tab.structural_values().to_vec();
        let integral = first_fractional(&x).is_none() && {
            let cand = rounded(&x);
            p.is_feasible(&cand) && p.evaluate(&cand) <= cutoff
        };
        // An integral relaxation point with x_i = 1 proves the 1-branch holds
        // an optimum, so that branch can be taken without another solve.
        while integral && prefix.len() < n && x[prefix.len()] > 0.5 {
            let j = prefix.len();
            tab.fix(j, 1);
            prefix.push(1);
        }
        if prefix.len() == n {
            let cand = rounded(&x);
            if p.is_feasible(&cand) && p.evaluate(&cand) <= cutoff {
                return Ok(Some(cand));
            }
            continue;
        }
        let mut zero = prefix.clone();
        zero.push(0);
        prefix.push(1);
        stack.push(zero);
        stack.push(prefix);
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{enumerate, verify_against_enumeration, LinearConstraint};
    use crate::lti::NoiseStream;

    #[test]
    fn tie_break_example() {
        let mut p = MilpProblem::new(2).with_objective(vec![-1.0, -1.0]);
        p.add_le(vec![(0, 1.0), (1, 1.0)], 1.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.assignment, vec![1, 0]);
        assert_eq!(s.objective_value, -1.0);
        assert!(verify_against_enumeration(&p).unwrap());
    }

    #[test]
    fn nonnegative_costs_without_rows() {
        let p = MilpProblem::new(4).with_objective(vec![1.0, 0.0, 2.5, 0.0]);
        let s = solve(&p).unwrap();
        assert_eq!(s.objective_value, 0.0);
        assert_eq!(s.assignment, vec![0, 1, 0, 1]);
        assert!(verify_against_enumeration(&p).unwrap());
    }

    #[test]
    fn contradictory_equalities() {
        let mut p = MilpProblem::new(1).with_objective(vec![1.0]);
        p.add_eq(vec![(0, 1.0)], 1.0);
        p.add_eq(vec![(0, 1.0)], 0.0);
        assert_eq!(solve(&p).unwrap().status, SolveStatus::Infeasible);
        assert!(verify_against_enumeration(&p).unwrap());
    }

    #[test]
    fn empty_problem() {
        let p = MilpProblem::new(0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(s.assignment.is_empty());
    }

    #[test]
    fn malformed_problem_is_a_config_error() {
        let mut p = MilpProblem::new(2);
        p.add_le(vec![(5, 1.0)], 1.0);
        assert!(matches!(solve(&p), Err(Error::Config(_))));
        let p = MilpProblem::new(2).with_objective(vec![1.0]);
        assert!(matches!(solve(&p), Err(Error::Dimension { .. })));
    }

    #[test]
    fn knapsack_matches_oracle() {
        let mut p = MilpProblem::new(6).with_objective(vec![-10.0, -13.0, -7.0, -8.0, -4.0, -9.0]);
        p.add_le(vec![(0, 5.0), (1, 7.0), (2, 3.0), (3, 4.0), (4, 2.0), (5, 5.0)], 12.0);
        let s = solve(&p).unwrap();
        let (x, z) = enumerate(&p).unwrap().unwrap();
        assert_eq!(s.assignment, x);
        assert!((s.objective_value - z).abs() < 1e-9);
    }

    fn random_problem(rng: &mut NoiseStream, n: usize, rows: usize, eq_rows: usize) -> MilpProblem {
        let mut p = MilpProblem::new(n).with_objective((0..n).map(|_| (rng.uniform() * 20.0 - 10.0).round()).collect());
        for r in 0..rows {
            let mut terms = Vec::new();
            for j in 0..n {
                if rng.uniform() < 0.6 {
                    terms.push((j, (rng.uniform() * 10.0 - 3.0).round()));
                }
            }
            let rhs = (rng.uniform() * 10.0).round();
            if r < eq_rows {
                p.eq_constraints.push(LinearConstraint::new(terms, rhs.min(3.0)));
            } else {
                p.le_constraints.push(LinearConstraint::new(terms, rhs));
            }
        }
        p
    }

    #[test]
    fn random_problems_agree_with_enumeration() {
        let mut rng = NoiseStream::from_seed(2024);
        for case in 0..60 {
            let p = random_problem(&mut rng, 8, 5, case % 3);
            assert!(verify_against_enumeration(&p).unwrap(), "case {case}: {p:?}");
        }
    }

    #[test]
    fn deterministic_repeat() {
        let mut rng = NoiseStream::from_seed(8);
        let p = random_problem(&mut rng, 10, 6, 1);
        let a = solve(&p).unwrap();
        let b = solve(&p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn node_bounds_never_exceed_subtree_optimum() {
        let mut rng = NoiseStream::from_seed(4242);
        let opts = SolverOptions {
            record_nodes: true,
            ..SolverOptions::default()
        };
        let mut branched = 0;
        for _ in 0..25 {
            let p = random_problem(&mut rng, 9, 6, 0);
            let s = solve_with(&p, &opts).unwrap();
            for rec in &s.node_log {
                let Some(bound) = rec.bound else { continue };
                if rec.outcome == NodeOutcome::Branched {
                    branched += 1;
                }
                let mut sub = p.clone();
                for &(j, v) in &rec.fixings {
                    sub.add_eq(vec![(j, 1.0)], f64::from(v));
                }
                if let Some((_, best)) = enumerate(&sub).unwrap() {
                    assert!(bound <= best + 1e-7 * (1.0 + best.abs()), "bound {bound} > subtree optimum {best}");
                }
            }
        }
        assert!(branched > 0, "instances never exercised branching");
    }

    #[test]
    fn zero_time_limit_reports_no_incumbent() {
        let mut rng = NoiseStream::from_seed(3);
        let mut p = random_problem(&mut rng, 12, 6, 0);
        p.time_limit = Some(std::time::Duration::ZERO);
        match solve(&p) {
            Err(Error::SolverNoIncumbent { vars }) => assert_eq!(vars, 12),
            other => panic!("unexpected {other:?}"),
        }
    }
}
