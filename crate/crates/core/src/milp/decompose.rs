//! Splitting programs along their constraint structure.
//!
//! Independent components are solved separately and recombined; because the
//! optimal set of a separable program is a product of per-component optimal
//! sets, the lexicographically greatest optimum is recovered component by
//! component. Programs whose blocks are tied together only by a few rows get
//! a Lagrangian lower bound instead: the coupling rows move into the
//! objective with non-negative multipliers, every block is solved exactly,
//! and the multipliers follow projected subgradient steps.

use std::time::Instant;

use super::bb::solve_with;
use super::{LinearConstraint, MilpProblem, SolveStatus, SolverOptions};
use crate::error::{Error, Result};

/// Variable sets that share no row, each sorted, ordered by first variable.
pub fn components(p: &MilpProblem) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..p.num_vars).collect();
    fn root(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    for c in p.eq_constraints.iter().chain(&p.le_constraints) {
        let mut terms = c.terms.iter().map(|&(j, _)| j);
        if let Some(first) = terms.next() {
            let r0 = root(&mut parent, first);
            for j in terms {
                let r = root(&mut parent, j);
                if r != r0 {
                    parent[r] = r0;
                }
            }
        }
    }
    let mut index_of_root = vec![usize::MAX; p.num_vars];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for j in 0..p.num_vars {
        let r = root(&mut parent, j);
        if index_of_root[r] == usize::MAX {
            index_of_root[r] = out.len();
            out.push(Vec::new());
        }
        out[index_of_root[r]].push(j);
    }
    out
}

/// Restriction of `p` to `vars` with the given rows, renumbered locally and
/// without the constant offset.
fn restrict<'a>(
    p: &MilpProblem,
    vars: &[usize],
    local: &[usize],
    eq: impl Iterator<Item = &'a LinearConstraint>,
    le: impl Iterator<Item = &'a LinearConstraint>,
) -> MilpProblem {
    let renumber = |c: &LinearConstraint| {
        LinearConstraint::new(c.terms.iter().map(|&(j, a)| (local[j], a)).collect(), c.rhs)
    };
    let mut sub = MilpProblem::new(vars.len()).with_objective(vars.iter().map(|&j| p.objective[j]).collect());
    sub.eq_constraints = eq.map(renumber).collect();
    sub.le_constraints = le.map(renumber).collect();
    sub.time_limit = p.time_limit;
    sub
}

/// Row indices grouped by the component of their first variable.
fn rows_by_group(rows: &[LinearConstraint], group_of: &[usize], groups: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); groups];
    for (r, c) in rows.iter().enumerate() {
        if let Some(&(j, _)) = c.terms.first() {
            out[group_of[j]].push(r);
        }
    }
    out
}

/// Solves each component on its own and stitches the results together.
/// Returns `None` when the program does not split.
pub(crate) fn solve_by_components(p: &MilpProblem, opts: &SolverOptions) -> Result<Option<super::MilpSolution>> {
    let comps = components(p);
    if comps.len() < 2 {
        return Ok(None);
    }
    let mut group_of = vec![0; p.num_vars];
    let mut local = vec![0; p.num_vars];
    for (g, vars) in comps.iter().enumerate() {
        for (l, &j) in vars.iter().enumerate() {
            group_of[j] = g;
            local[j] = l;
        }
    }
    let eq_rows = rows_by_group(&p.eq_constraints, &group_of, comps.len());
    let le_rows = rows_by_group(&p.le_constraints, &group_of, comps.len());
    // A row without terms touches no component; it only has to hold at zero.
    let empty_ok = p.eq_constraints.iter().filter(|c| c.terms.is_empty()).all(|c| c.rhs.abs() <= 1e-9)
        && p.le_constraints.iter().filter(|c| c.terms.is_empty()).all(|c| c.rhs >= -1e-9);

    let mut assignment = vec![0u8; p.num_vars];
    let mut value = p.offset;
    let mut bound = p.offset;
    let mut status = SolveStatus::Optimal;
    let mut nodes = 0;
    for (g, vars) in comps.iter().enumerate() {
        let sub = restrict(
            p,
            vars,
            &local,
            eq_rows[g].iter().map(|&r| &p.eq_constraints[r]),
            le_rows[g].iter().map(|&r| &p.le_constraints[r]),
        );
        let sol = solve_with(&sub, opts)?;
        nodes += sol.nodes;
        match sol.status {
            SolveStatus::Infeasible => {
                return Ok(Some(super::MilpSolution {
                    status: SolveStatus::Infeasible,
                    assignment: Vec::new(),
                    objective_value: f64::INFINITY,
                    gap: 0.0,
                    nodes,
                    node_log: Vec::new(),
                }))
            }
            SolveStatus::TimeLimitIncumbent => status = SolveStatus::TimeLimitIncumbent,
            SolveStatus::Optimal => {}
        }
        for (l, &j) in vars.iter().enumerate() {
            assignment[j] = sol.assignment[l];
        }
        value += sol.objective_value;
        bound += sol.objective_value - sol.gap * sol.objective_value.abs().max(1.0);
    }
    if !empty_ok {
        return Ok(Some(super::MilpSolution {
            status: SolveStatus::Infeasible,
            assignment: Vec::new(),
            objective_value: f64::INFINITY,
            gap: 0.0,
            nodes,
            node_log: Vec::new(),
        }));
    }
    let gap = if status == SolveStatus::Optimal {
        0.0
    } else {
        ((value - bound) / value.abs().max(1.0)).max(0.0)
    };
    Ok(Some(super::MilpSolution {
        status,
        assignment,
        objective_value: value,
        gap,
        nodes,
        node_log: Vec::new(),
    }))
}

/// Variable blocks plus the `≤` rows (indices into `le_constraints`) that
/// tie them together. Every other row must stay inside one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub blocks: Vec<Vec<usize>>,
    pub coupling: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeOutcome {
    /// Best lower bound on the program's optimum.
    pub bound: f64,
    pub multipliers: Vec<f64>,
    /// Block optima at the best multipliers; may break coupling rows.
    pub relaxed: Vec<u8>,
    pub iterations: usize,
    /// The relaxed point met every coupling row with complementary
    /// slackness, so it is optimal for the full program.
    pub proven_optimal: bool,
}

struct Block {
    vars: Vec<usize>,
    problem: MilpProblem,
}

fn build_blocks(p: &MilpProblem, dec: &Decomposition) -> Result<Vec<Block>> {
    let mut block_of = vec![usize::MAX; p.num_vars];
    let mut local = vec![0; p.num_vars];
    for (b, vars) in dec.blocks.iter().enumerate() {
        for (l, &j) in vars.iter().enumerate() {
            if j >= p.num_vars || block_of[j] != usize::MAX {
                return Err(Error::internal(format!("variable {j} is missing or in two blocks")));
            }
            block_of[j] = b;
            local[j] = l;
        }
    }
    if block_of.contains(&usize::MAX) {
        return Err(Error::internal("blocks do not cover every variable"));
    }
    let mut coupled = vec![false; p.le_constraints.len()];
    for &r in &dec.coupling {
        *coupled
            .get_mut(r)
            .ok_or_else(|| Error::internal(format!("coupling row {r} does not exist")))? = true;
    }
    let owner = |c: &LinearConstraint| -> Result<Option<usize>> {
        let Some(&(first, _)) = c.terms.first() else { return Ok(None) };
        let b = block_of[first];
        if c.terms.iter().any(|&(j, _)| block_of[j] != b) {
            return Err(Error::internal("a non-coupling row spans two blocks"));
        }
        Ok(Some(b))
    };
    let mut eq = vec![Vec::new(); dec.blocks.len()];
    let mut le = vec![Vec::new(); dec.blocks.len()];
    for c in &p.eq_constraints {
        if let Some(b) = owner(c)? {
            eq[b].push(c);
        }
    }
    for (r, c) in p.le_constraints.iter().enumerate() {
        if !coupled[r] {
            if let Some(b) = owner(c)? {
                le[b].push(c);
            }
        }
    }
    Ok(dec
        .blocks
        .iter()
        .enumerate()
        .map(|(b, vars)| {
            let mut problem = restrict(p, vars, &local, eq[b].iter().copied(), le[b].iter().copied());
            problem.time_limit = None;
            Block {
                vars: vars.clone(),
                problem,
            }
        })
        .collect())
}

/// Projected subgradient ascent on the Lagrangian dual of the coupling rows.
///
/// `upper` is the value of a known feasible point and sets the Polyak step.
/// Stops after `max_iterations`, at `deadline`, once the bound reaches
/// `upper`, or when the step length collapses.
pub fn lagrangian_bound(
    p: &MilpProblem,
    dec: &Decomposition,
    upper: f64,
    max_iterations: usize,
    deadline: Option<Instant>,
) -> Result<LagrangeOutcome> {
    p.validate()?;
    let mut blocks = build_blocks(p, dec)?;
    let exact = SolverOptions {
        exact_threshold: usize::MAX,
        ..SolverOptions::default()
    };
    let rows: Vec<&LinearConstraint> = dec.coupling.iter().map(|&r| &p.le_constraints[r]).collect();
    let mut mu = vec![0.0; rows.len()];
    let mut best: Option<LagrangeOutcome> = None;
    let mut scale = 2.0;
    let mut stalled = 0;
    let mut x = vec![0u8; p.num_vars];

    for iteration in 0..=max_iterations {
        let mut adjusted = p.objective.clone();
        for (row, &m) in rows.iter().zip(&mu) {
            if m > 0.0 {
                for &(j, a) in &row.terms {
                    adjusted[j] += m * a;
                }
            }
        }
        let mut value = p.offset - rows.iter().zip(&mu).map(|(r, m)| m * r.rhs).sum::<f64>();
        for block in &mut blocks {
            for (l, &j) in block.vars.iter().enumerate() {
                block.problem.objective[l] = adjusted[j];
            }
            let sol = solve_with(&block.problem, &exact)?;
            if sol.status != SolveStatus::Optimal {
                return Err(Error::internal("a Lagrangian block has no feasible point"));
            }
            value += sol.objective_value;
            for (l, &j) in block.vars.iter().enumerate() {
                x[j] = sol.assignment[l];
            }
        }

        let mut g: Vec<f64> = rows.iter().map(|r| r.activity(&x) - r.rhs).collect();
        for (gi, &m) in g.iter_mut().zip(&mu) {
            if m <= 0.0 && *gi < 0.0 {
                *gi = 0.0;
            }
        }
        let norm2: f64 = g.iter().map(|v| v * v).sum();
        let slack_ok = rows
            .iter()
            .zip(&mu)
            .all(|(r, &m)| r.activity(&x) <= r.rhs + 1e-9 && (m == 0.0 || (r.activity(&x) - r.rhs).abs() <= 1e-9));

        let improved = best.as_ref().is_none_or(|b| value > b.bound + super::objective_tolerance(b.bound));
        if improved {
            best = Some(LagrangeOutcome {
                bound: value,
                multipliers: mu.clone(),
                relaxed: x.clone(),
                iterations: iteration + 1,
                proven_optimal: slack_ok,
            });
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 5 {
                scale /= 2.0;
                stalled = 0;
            }
        }
        if let Some(b) = best.as_mut() {
            b.iterations = iteration + 1;
        }
        let done = slack_ok
            || norm2 == 0.0
            || value >= upper - super::objective_tolerance(upper)
            || scale < 1e-4
            || deadline.is_some_and(|dl| Instant::now() >= dl);
        if done {
            break;
        }
        let step = scale * (upper - value).max(1e-9 * (1.0 + upper.abs())) / norm2;
        for (m, gi) in mu.iter_mut().zip(&g) {
            *m = (*m + step * gi).max(0.0);
        }
    }
    best.ok_or_else(|| Error::internal("Lagrangian loop ran no iteration"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{enumerate, solve};

    #[test]
    fn components_follow_shared_rows() {
        let mut p = MilpProblem::new(5).with_objective(vec![1.0; 5]);
        p.add_le(vec![(0, 1.0), (3, 1.0)], 1.0);
        p.add_eq(vec![(3, 1.0), (4, 1.0)], 1.0);
        assert_eq!(components(&p), vec![vec![0, 3, 4], vec![1], vec![2]]);
    }

    #[test]
    fn split_solve_keeps_the_lexicographic_tie_break() {
        // Two copies of `min −x₀ − x₁ s.t. x₀ + x₁ ≤ 1`, interleaved.
        let mut p = MilpProblem::new(4).with_objective(vec![-1.0; 4]);
        p.add_le(vec![(0, 1.0), (2, 1.0)], 1.0);
        p.add_le(vec![(1, 1.0), (3, 1.0)], 1.0);
        p.offset = 3.0;
        let s = solve(&p).unwrap();
        assert_eq!(s.assignment, vec![1, 1, 0, 0]);
        assert_eq!(s.objective_value, 1.0);
        assert_eq!(enumerate(&p).unwrap().unwrap().0, s.assignment);
    }

    #[test]
    fn split_solve_reports_an_infeasible_component() {
        let mut p = MilpProblem::new(3).with_objective(vec![1.0; 3]);
        p.add_eq(vec![(0, 1.0), (1, 1.0)], 1.0);
        p.add_le(vec![(2, -1.0)], -2.0);
        assert_eq!(solve(&p).unwrap().status, SolveStatus::Infeasible);
    }

    /// Two one-hot blocks sharing a capacity row that only one may use.
    fn coupled_pair() -> (MilpProblem, Decomposition) {
        let mut p = MilpProblem::new(4).with_objective(vec![1.0, 5.0, 2.0, 4.0]);
        p.add_eq(vec![(0, 1.0), (1, 1.0)], 1.0);
        p.add_eq(vec![(2, 1.0), (3, 1.0)], 1.0);
        p.add_le(vec![(0, 1.0), (2, 1.0)], 1.0);
        let dec = Decomposition {
            blocks: vec![vec![0, 1], vec![2, 3]],
            coupling: vec![0],
        };
        (p, dec)
    }

    #[test]
    fn dual_bound_reaches_the_optimum_of_a_tight_pair() {
        let (p, dec) = coupled_pair();
        let opt = enumerate(&p).unwrap().unwrap().1;
        assert_eq!(opt, 5.0);
        let out = lagrangian_bound(&p, &dec, 7.0, 200, None).unwrap();
        assert!(out.bound <= opt + 1e-9);
        assert!(out.bound >= opt - 1e-6, "bound {}", out.bound);
    }

    #[test]
    fn zero_iterations_give_the_uncoupled_bound() {
        let (p, dec) = coupled_pair();
        let out = lagrangian_bound(&p, &dec, 7.0, 0, None).unwrap();
        assert_eq!(out.bound, 3.0);
        assert_eq!(out.relaxed, vec![1, 0, 1, 0]);
        assert!(!out.proven_optimal);
    }

    #[test]
    fn rows_across_blocks_are_rejected() {
        let (mut p, dec) = coupled_pair();
        p.add_le(vec![(1, 1.0), (3, 1.0)], 1.0);
        assert!(lagrangian_bound(&p, &dec, 7.0, 1, None).is_err());
    }
}
