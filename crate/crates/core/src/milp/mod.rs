//! Pure binary linear programs: problem type, exact branch-and-bound solver,
//! an exhaustive oracle for small instances, and product linearization.
//!
//! Ties between optimal assignments are broken towards the lexicographically
//! greatest 0/1 vector in variable order. `min −x₁ − x₂ s.t. x₁ + x₂ ≤ 1`
//! therefore returns `(1, 0)`.

mod bb;
mod decompose;
mod enumerate;
mod linearize;
mod lp;
mod lp_format;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bb::{solve, solve_with, NodeOutcome, NodeRecord};
pub use decompose::{components, lagrangian_bound, Decomposition, LagrangeOutcome};
pub use enumerate::{enumerate, verify_against_enumeration, ENUMERATION_LIMIT};
pub use linearize::{linearize_binary_product, BinaryExpr};
pub use lp_format::{write_lp, write_lp_file};

/// Sparse row `Σ terms ≤ rhs` (or `= rhs`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearConstraint {
    pub fn new(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { terms, rhs }
    }

    pub fn activity(&self, x: &[u8]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * f64::from(x[j])).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    /// Constant added to every objective value.
    pub offset: f64,
    pub eq_constraints: Vec<LinearConstraint>,
    pub le_constraints: Vec<LinearConstraint>,
    pub var_names: Option<Vec<String>>,
    pub time_limit: Option<Duration>,
}

impl MilpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            offset: 0.0,
            eq_constraints: Vec::new(),
            le_constraints: Vec::new(),
            var_names: None,
            time_limit: None,
        }
    }

    pub fn with_objective(mut self, objective: Vec<f64>) -> Self {
        self.objective = objective;
        self
    }

    pub fn add_eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.eq_constraints.push(LinearConstraint::new(terms, rhs));
    }

    pub fn add_le(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.le_constraints.push(LinearConstraint::new(terms, rhs));
    }

    /// Appends a fresh variable and returns its index.
    pub fn add_var(&mut self, cost: f64, name: Option<String>) -> usize {
        let idx = self.num_vars;
        self.num_vars += 1;
        self.objective.push(cost);
        if let Some(names) = &mut self.var_names {
            names.push(name.unwrap_or_else(|| format!("x{idx}")));
        } else if let Some(name) = name {
            let mut names: Vec<String> = (0..idx).map(|i| format!("x{i}")).collect();
            names.push(name);
            self.var_names = Some(names);
        }
        idx
    }

    pub fn var_name(&self, j: usize) -> String {
        self.var_names
            .as_ref()
            .and_then(|n| n.get(j).cloned())
            .unwrap_or_else(|| format!("x{j}"))
    }

    pub fn num_constraints(&self) -> usize {
        self.eq_constraints.len() + self.le_constraints.len()
    }

    pub fn evaluate(&self, x: &[u8]) -> f64 {
        self.offset
            + self
                .objective
                .iter()
                .zip(x)
                .map(|(c, &v)| c * f64::from(v))
                .sum::<f64>()
    }

    /// Checks every row with an absolute tolerance scaled by the row's size.
    pub fn is_feasible(&self, x: &[u8]) -> bool {
        let tol = |c: &LinearConstraint| FEAS_TOL * (1.0 + c.rhs.abs());
        x.len() == self.num_vars
            && x.iter().all(|&v| v <= 1)
            && self.eq_constraints.iter().all(|c| (c.activity(x) - c.rhs).abs() <= tol(c))
            && self.le_constraints.iter().all(|c| c.activity(x) <= c.rhs + tol(c))
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars {
            return Err(Error::Dimension {
                context: "milp objective",
                expected: self.num_vars.to_string(),
                actual: self.objective.len().to_string(),
            });
        }
        if let Some(names) = &self.var_names {
            if names.len() != self.num_vars {
                return Err(Error::Dimension {
                    context: "milp variable names",
                    expected: self.num_vars.to_string(),
                    actual: names.len().to_string(),
                });
            }
        }
        if !self.offset.is_finite() || self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("objective coefficients must be finite"));
        }
        for c in self.eq_constraints.iter().chain(&self.le_constraints) {
            if !c.rhs.is_finite() {
                return Err(Error::config("constraint right-hand sides must be finite"));
            }
            for &(j, a) in &c.terms {
                if j >= self.num_vars {
                    return Err(Error::config(format!(
                        "constraint references variable {j} of {}",
                        self.num_vars
                    )));
                }
                if !a.is_finite() {
                    return Err(Error::config("constraint coefficients must be finite"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    TimeLimitIncumbent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpSolution {
    pub status: SolveStatus,
    /// Empty when infeasible.
    pub assignment: Vec<u8>,
    /// `+∞` when infeasible.
    pub objective_value: f64,
    /// Relative gap `(incumbent − bound) / max(1, |incumbent|)`; 0 when optimal.
    pub gap: f64,
    pub nodes: usize,
    pub node_log: Vec<NodeRecord>,
}

impl MilpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Knobs shared by every solve in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Problems with more binaries than this get `default_time_limit` unless
    /// they carry their own limit.
    pub exact_threshold: usize,
    pub default_time_limit: Duration,
    /// Keep one record per branch-and-bound node.
    pub record_nodes: bool,
    /// When set, allocation programs are written here in LP format.
    pub dump_dir: Option<std::path::PathBuf>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            exact_threshold: 600,
            default_time_limit: Duration::from_secs(60),
            record_nodes: false,
            dump_dir: None,
        }
    }
}

impl SolverOptions {
    pub fn effective_time_limit(&self, p: &MilpProblem) -> Option<Duration> {
        p.time_limit.or_else(|| (p.num_vars > self.exact_threshold).then_some(self.default_time_limit))
    }
}

pub(crate) const FEAS_TOL: f64 = 1e-7;
pub(crate) const INT_TOL: f64 = 1e-6;

/// Two objective values closer than this are treated as a tie.
pub fn objective_tolerance(z: f64) -> f64 {
    1e-7 * (1.0 + z.abs())
}
