//! Exhaustive oracle for small binary programs.

use super::{objective_tolerance, solve, MilpProblem, SolveStatus};
use crate::error::{Error, Result};

pub const ENUMERATION_LIMIT: usize = 22;

/// Best assignment by brute force, with the solver's tie-break: among
/// assignments within tolerance of the minimum, the lexicographically
/// greatest. `None` when nothing is feasible.
///
/// Walks all `2ⁿ` points in Gray-code order so each step flips one variable
/// and row activities update incrementally.
pub fn enumerate(p: &MilpProblem) -> Result<Option<(Vec<u8>, f64)>> {
    p.validate()?;
    let n = p.num_vars;
    if n > ENUMERATION_LIMIT {
        return Err(Error::TooLargeToEnumerate {
            vars: n,
            limit: ENUMERATION_LIMIT,
        });
    }
    let rows: Vec<_> = p.eq_constraints.iter().map(|c| (c, true)).chain(p.le_constraints.iter().map(|c| (c, false))).collect();
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, (c, _)) in rows.iter().enumerate() {
        for &(j, a) in &c.terms {
            columns[j].push((i, a));
        }
    }
    let mut activity = vec![0.0; rows.len()];
    let mut x = vec![0u8; n];

    let feasible = |activity: &[f64]| {
        rows.iter().zip(activity).all(|((c, is_eq), &act)| {
            let tol = super::FEAS_TOL * (1.0 + c.rhs.abs());
            if *is_eq {
                (act - c.rhs).abs() <= tol
            } else {
                act <= c.rhs + tol
            }
        })
    };

    // Keep every point that was near the best value seen so far; the tie
    // window is measured from the final minimum below.
    let mut points: Vec<(u32, f64)> = Vec::new();
    let mut running_min = f64::INFINITY;
    let total: u64 = 1 << n;
    for step in 0..total {
        if step > 0 {
            let j = step.trailing_zeros() as usize;
            let delta = if x[j] == 0 { 1.0 } else { -1.0 };
            x[j] ^= 1;
            for &(i, a) in &columns[j] {
                activity[i] += delta * a;
            }
        }
        if feasible(&activity) {
            // Variable 0 is the most significant bit, so a larger key is a
            // lexicographically greater vector.
            let key = x.iter().fold(0u32, |acc, &v| (acc << 1) | u32::from(v));
            let z = p.evaluate(&x);
            if z <= running_min + objective_tolerance(running_min) {
                running_min = running_min.min(z);
                points.push((key, z));
            }
        }
    }
    let Some(min) = points.iter().map(|&(_, z)| z).reduce(f64::min) else {
        return Ok(None);
    };
    let window = min + objective_tolerance(min);
    let key = points.iter().filter(|&&(_, z)| z <= window).map(|&(k, _)| k).max().unwrap();
    let best: Vec<u8> = (0..n).map(|j| ((key >> (n - 1 - j)) & 1) as u8).collect();
    let value = p.evaluate(&best);
    Ok(Some((best, value)))
}

/// `true` when the solver and brute force agree on feasibility, on the
/// optimal value and on the chosen assignment.
pub fn verify_against_enumeration(p: &MilpProblem) -> Result<bool> {
    let oracle = enumerate(p)?;
    let solved = solve(p)?;
    Ok(match oracle {
        None => solved.status == SolveStatus::Infeasible,
        Some((x, z)) => {
            solved.status == SolveStatus::Optimal
                && (solved.objective_value - z).abs() <= objective_tolerance(z)
                && solved.assignment == x
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_large_problems() {
        let p = MilpProblem::new(23);
        assert!(matches!(enumerate(&p), Err(Error::TooLargeToEnumerate { vars: 23, limit: 22 })));
        assert!(verify_against_enumeration(&p).is_err());
    }

    #[test]
    fn gray_code_visits_every_point() {
        // Only x = (1, 0, 1) satisfies both rows.
        let mut p = MilpProblem::new(3).with_objective(vec![0.0; 3]);
        p.add_eq(vec![(0, 1.0), (1, 1.0), (2, 1.0)], 2.0);
        p.add_le(vec![(1, 4.0), (2, -1.0)], -1.0);
        let (x, z) = enumerate(&p).unwrap().unwrap();
        assert_eq!(x, vec![1, 0, 1]);
        assert_eq!(z, 0.0);
    }
}
