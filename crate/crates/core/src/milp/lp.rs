//! Dense bounded dual simplex over the LP relaxation of a binary program.
//!
//! Every column is boxed: structurals in `[0, 1]`, one slack per `≤` row in
//! `[0, rhs − min activity]`, one artificial per `=` row fixed at `[0, 0]`.
//! Starting from the all-slack basis and parking each nonbasic column at the
//! bound its reduced cost prefers gives a dual-feasible basis for any box,
//! so the same tableau is reused across branch-and-bound nodes without a
//! phase-one pass.

use std::time::Instant;

use nalgebra::DMatrix;

use super::MilpProblem;
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PRIMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum LpStatus {
    Optimal(f64),
    Infeasible,
    /// The dual bound passed the cutoff; the value is that bound.
    Cutoff(f64),
    TimeOut,
}

pub(crate) struct Tableau {
    m: usize,
    n: usize,
    cols: usize,
    /// Structural part of the constraint matrix, row-major `m × n`.
    a: Vec<f64>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    offset: f64,
    root_lo: Vec<f64>,
    root_hi: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// `B⁻¹[A | I]`, row-major `m × cols`.
    t: Vec<f64>,
    beta: Vec<f64>,
    d: Vec<f64>,
    basic: Vec<usize>,
    row_of: Vec<usize>,
    x: Vec<f64>,
    pivots_since_refactor: usize,
    pub(crate) total_pivots: usize,
}

const NONBASIC: usize = usize::MAX;

impl Tableau {
    /// Builds the relaxation. Returns `None` when some `≤` row cannot be met
    /// by any point of the unit box.
    pub(crate) fn new(p: &MilpProblem) -> Option<Self> {
        let n = p.num_vars;
        let rows: Vec<(&super::LinearConstraint, bool)> = p
            .le_constraints
            .iter()
            .map(|c| (c, false))
            .chain(p.eq_constraints.iter().map(|c| (c, true)))
            .collect();
        let m = rows.len();
        let cols = n + m;
        let mut a = vec![0.0; m * n];
        let mut rhs = vec![0.0; m];
        let root_lo = vec![0.0; cols];
        let mut root_hi = vec![1.0; cols];
        for (i, (c, is_eq)) in rows.iter().enumerate() {
            for &(j, v) in &c.terms {
                a[i * n + j] += v;
            }
            rhs[i] = c.rhs;
            let row = &a[i * n..(i + 1) * n];
            let min_act: f64 = row.iter().map(|v| v.min(0.0)).sum();
            let max_act: f64 = row.iter().map(|v| v.max(0.0)).sum();
            let tol = 1e-9 * (1.0 + c.rhs.abs());
            if *is_eq {
                if c.rhs < min_act - tol || c.rhs > max_act + tol {
                    return None;
                }
                root_hi[n + i] = 0.0;
            } else {
                if c.rhs < min_act - tol {
                    return None;
                }
                root_hi[n + i] = (c.rhs - min_act).max(0.0);
            }
        }
        let mut cost = vec![0.0; cols];
        cost[..n].copy_from_slice(&p.objective);
        let mut t = vec![0.0; m * cols];
        for i in 0..m {
            t[i * cols..i * cols + n].copy_from_slice(&a[i * n..(i + 1) * n]);
            t[i * cols + n + i] = 1.0;
        }
        let mut row_of = vec![NONBASIC; cols];
        let basic: Vec<usize> = (0..m).map(|i| n + i).collect();
        for (i, &b) in basic.iter().enumerate() {
            row_of[b] = i;
        }
        Some(Self {
            m,
            n,
            cols,
            a,
            beta: rhs.clone(),
            rhs,
            d: cost.clone(),
            cost,
            offset: p.offset,
            lo: root_lo.clone(),
            hi: root_hi.clone(),
            root_lo,
            root_hi,
            t,
            basic,
            row_of,
            x: vec![0.0; cols],
            pivots_since_refactor: 0,
            total_pivots: 0,
        })
    }

    pub(crate) fn num_structural(&self) -> usize {
        self.n
    }

    /// Resets structural bounds to the unit box, then pins `fixings`.
    pub(crate) fn set_bounds(&mut self, fixings: impl IntoIterator<Item = (usize, u8)>) {
        self.lo[..self.n].copy_from_slice(&self.root_lo[..self.n]);
        self.hi[..self.n].copy_from_slice(&self.root_hi[..self.n]);
        for (j, v) in fixings {
            self.lo[j] = f64::from(v);
            self.hi[j] = f64::from(v);
        }
    }

    pub(crate) fn fix(&mut self, j: usize, v: u8) {
        self.lo[j] = f64::from(v);
        self.hi[j] = f64::from(v);
    }

    pub(crate) fn structural_values(&self) -> &[f64] {
        &self.x[..self.n]
    }

    fn objective(&self) -> f64 {
        self.offset + self.cost.iter().zip(&self.x).map(|(c, x)| c * x).sum::<f64>()
    }

    fn place_nonbasics(&mut self) {
        for j in 0..self.cols {
            if self.row_of[j] != NONBASIC {
                continue;
            }
            // Reduced costs within the dual tolerance are noise; flipping on
            // them can make the method cycle.
            self.x[j] = if self.lo[j] == self.hi[j] || self.d[j] > DUAL_TOL {
                self.lo[j]
            } else if self.d[j] < -DUAL_TOL || self.x[j] >= self.hi[j] {
                self.hi[j]
            } else {
                self.lo[j]
            };
        }
    }

    fn compute_basic_values(&mut self) {
        let active: Vec<(usize, f64)> = (0..self.cols)
            .filter(|&j| self.row_of[j] == NONBASIC && self.x[j] != 0.0)
            .map(|j| (j, self.x[j]))
            .collect();
        for i in 0..self.m {
            let row = &self.t[i * self.cols..(i + 1) * self.cols];
            let v = active.iter().fold(self.beta[i], |acc, &(j, xj)| acc - row[j] * xj);
            self.x[self.basic[i]] = v;
        }
    }

    /// Recomputes `B⁻¹[A | I]`, `B⁻¹b` and the reduced costs from scratch.
    fn refactor(&mut self) -> Result<()> {
        let (m, n, cols) = (self.m, self.n, self.cols);
        if m == 0 {
            return Ok(());
        }
        let mut bmat = DMatrix::zeros(m, m);
        for (k, &var) in self.basic.iter().enumerate() {
            if var < n {
                for i in 0..m {
                    bmat[(i, k)] = self.a[i * n + var];
                }
            } else {
                bmat[(var - n, k)] = 1.0;
            }
        }
        let mut full = DMatrix::zeros(m, cols + 1);
        for i in 0..m {
            for j in 0..n {
                full[(i, j)] = self.a[i * n + j];
            }
            full[(i, n + i)] = 1.0;
            full[(i, cols)] = self.rhs[i];
        }
        let solved = bmat
            .lu()
            .solve(&full)
            .ok_or_else(|| Error::internal("simplex basis became singular"))?;
        for i in 0..m {
            for j in 0..cols {
                self.t[i * cols + j] = solved[(i, j)];
            }
            self.beta[i] = solved[(i, cols)];
        }
        for j in 0..cols {
            let mut dj = self.cost[j];
            for (i, &b) in self.basic.iter().enumerate() {
                dj -= self.cost[b] * self.t[i * cols + j];
            }
            self.d[j] = if self.row_of[j] == NONBASIC { dj } else { 0.0 };
        }
        self.pivots_since_refactor = 0;
        Ok(())
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let cols = self.cols;
        let piv = self.t[r * cols + q];
        {
            let row = &mut self.t[r * cols..(r + 1) * cols];
            for v in row.iter_mut() {
                *v /= piv;
            }
        }
        self.beta[r] /= piv;
        let pivot_row: Vec<(usize, f64)> = self.t[r * cols..(r + 1) * cols]
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .collect();
        let beta_r = self.beta[r];
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * cols + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * cols..(i + 1) * cols];
            for &(j, v) in &pivot_row {
                row[j] -= f * v;
            }
            row[q] = 0.0;
            self.beta[i] -= f * beta_r;
        }
        let dq = self.d[q];
        if dq != 0.0 {
            for &(j, v) in &pivot_row {
                self.d[j] -= dq * v;
            }
        }
        self.d[q] = 0.0;
        let leaving = self.basic[r];
        self.row_of[leaving] = NONBASIC;
        self.basic[r] = q;
        self.row_of[q] = r;
        self.pivots_since_refactor += 1;
        self.total_pivots += 1;
    }

    fn infeasibility(&self, var: usize) -> f64 {
        let v = self.x[var];
        let tol = PRIMAL_TOL * (1.0 + v.abs());
        if v < self.lo[var] - tol {
            self.lo[var] - v
        } else if v > self.hi[var] + tol {
            v - self.hi[var]
        } else {
            0.0
        }
    }

    fn choose_leaving(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.m {
            let inf = self.infeasibility(self.basic[r]);
            if inf <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((br, bi)) => {
                    if bland {
                        self.basic[r] < self.basic[br]
                    } else {
                        inf > bi
                    }
                }
            };
            if better {
                best = Some((r, inf));
            }
        }
        best.map(|(r, _)| r)
    }

    /// Dual ratio test on row `r`. `increase` says whether the leaving basic
    /// variable has to move up to its lower bound.
    fn choose_entering(&self, r: usize, increase: bool, bland: bool) -> Option<usize> {
        let row = &self.t[r * self.cols..(r + 1) * self.cols];
        let eligible = |j: usize| -> Option<f64> {
            if self.row_of[j] != NONBASIC || self.lo[j] == self.hi[j] {
                return None;
            }
            let a = row[j];
            if a.abs() <= PIVOT_TOL {
                return None;
            }
            let at_lower = self.x[j] <= self.lo[j];
            // Raising x_j moves x_B by −a; lowering it moves x_B by +a.
            let ok = if at_lower { (a < 0.0) == increase } else { (a > 0.0) == increase };
            ok.then_some(a)
        };
        if bland {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.cols {
                if let Some(a) = eligible(j) {
                    let ratio = self.d[j].abs() / a.abs();
                    if best.is_none_or(|(_, br)| ratio < br - DUAL_TOL) {
                        best = Some((j, ratio));
                    }
                }
            }
            return best.map(|(j, _)| j);
        }
        // Harris two-pass: a relaxed bound on the step, then the largest
        // pivot among candidates within it.
        let mut bound = f64::INFINITY;
        for j in 0..self.cols {
            if let Some(a) = eligible(j) {
                bound = bound.min((self.d[j].abs() + DUAL_TOL) / a.abs());
            }
        }
        if !bound.is_finite() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.cols {
            if let Some(a) = eligible(j) {
                if self.d[j].abs() / a.abs() <= bound && best.is_none_or(|(_, ba)| a.abs() > ba) {
                    best = Some((j, a.abs()));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    /// Runs the dual simplex from the current basis under the current bounds.
    pub(crate) fn solve(&mut self, cutoff: f64, deadline: Option<Instant>) -> Result<LpStatus> {
        self.place_nonbasics();
        self.compute_basic_values();
        let refactor_every = 50 + self.m / 2;
        let bland_after = 20 * (self.m + self.n) + 1000;
        let give_up = 200 * (self.m + self.n) + 10_000;
        let mut iters = 0usize;
        let mut refactored_for_tiny_pivot = false;
        loop {
            if iters % 32 == 0 {
                if let Some(dl) = deadline {
                    if Instant::now() >= dl {
                        return Ok(LpStatus::TimeOut);
                    }
                }
            }
            let z = self.objective();
            if z > cutoff {
                return Ok(LpStatus::Cutoff(z));
            }
            let bland = iters > bland_after;
            let Some(r) = self.choose_leaving(bland) else {
                return Ok(LpStatus::Optimal(z));
            };
            let leaving = self.basic[r];
            let increase = self.x[leaving] < self.lo[leaving];
            let Some(q) = self.choose_entering(r, increase, bland) else {
                if self.pivots_since_refactor > 0 {
                    self.refactor()?;
                    self.place_nonbasics();
                    self.compute_basic_values();
                    continue;
                }
                return Ok(LpStatus::Infeasible);
            };
            if self.t[r * self.cols + q].abs() < 1e-7 && !refactored_for_tiny_pivot && self.pivots_since_refactor > 0 {
                refactored_for_tiny_pivot = true;
                self.refactor()?;
                self.place_nonbasics();
                self.compute_basic_values();
                continue;
            }
            refactored_for_tiny_pivot = false;
            let target = if increase { self.lo[leaving] } else { self.hi[leaving] };
            self.pivot(r, q);
            self.x[leaving] = target;
            if self.pivots_since_refactor >= refactor_every {
                self.refactor()?;
            }
            self.place_nonbasics();
            self.compute_basic_values();
            iters += 1;
            if iters > give_up {
                return Err(Error::internal(format!(
                    "dual simplex did not converge after {iters} pivots"
                )));
            }
        }
    }
}
