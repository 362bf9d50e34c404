//! Shared construction of the freshness-cost binary programs.
//!
//! Every delay-control and allocation program has the same skeleton: for each
//! loop and time `s`, either the link is already known or a one-hot group of
//! binaries chooses it; for each time `t` in the objective window, selector
//! variables `b_{j,t}` mark which sample is freshest at the controller and
//! carry the matching error cost.
//!
//! Selectors are products of "arrived by" indicators
//! `a(s, d) = Σ_{l≤d} ϑ_s(l)`:
//! `b_{j,t} = Π_{d<j} (1 − a(t−d, d)) · a(t−j, j)`, and for `t < D` the
//! prior-mean entry `b_{t+1,t} = Π_{d≤t} (1 − a(t−d, d))`.
//! Factors that are fixed by known links fold away before any variable or
//! row is created.

use crate::error::{Error, Result};
use crate::lqg::{cumulative_error_costs, RiccatiSolution};
use crate::lti::{LinkSelection, NetworkModel, PlantModel};
use crate::milp::{linearize_binary_product, BinaryExpr, Decomposition, MilpProblem};

/// `C[t][j]`: cost of the freshest sample being `j` steps old at time `t`,
/// for `j ≤ min(D, t + 1)`.
pub type ErrorCosts = Vec<Vec<f64>>;

pub fn error_cost_table(model: &PlantModel, sol: &RiccatiSolution, max_delay: usize) -> Result<ErrorCosts> {
    (0..sol.horizon())
        .map(|t| cumulative_error_costs(model, sol, t, max_delay.min(t + 1)))
        .collect()
}

/// How selector products are written as linear rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    /// Full product linearization; exact for any cost table.
    Products,
    /// One variable per age threshold, `y_{l,t} ≥ 1 − Σ_{j<l} a(t−j, j)`,
    /// priced at the increment `C[t][l] − C[t][l−1]`. At binary links the
    /// right-hand side is 1 exactly when nothing younger than `l` arrived, so
    /// with non-negative increments the minimizer sets `y` to that indicator.
    /// Far fewer rows than `Products` and a much tighter relaxation.
    #[default]
    Staleness,
}

#[derive(Debug, Clone)]
enum Slot {
    Known(LinkSelection),
    /// Variable index per link, `None` where the link is not allowed.
    Decision(Vec<Option<usize>>),
}

/// One loop's contribution to a program.
pub struct LoopSpec<'a> {
    /// Realized links for times `< k`.
    pub history: &'a [LinkSelection],
    /// Allowed links per time in `[k, T)`.
    pub allowed: Vec<Vec<bool>>,
    /// Error costs; `None` drops the freshness terms entirely.
    pub costs: Option<&'a ErrorCosts>,
    /// Multiplies every objective term of this loop.
    pub weight: f64,
}

pub struct ProgramSpec<'a> {
    pub k: usize,
    pub horizon: usize,
    pub net: &'a NetworkModel,
    pub loops: Vec<LoopSpec<'a>>,
    /// Add the per-link capacity rows across loops.
    pub capacity: bool,
    pub encoding: Encoding,
}

#[derive(Debug, Clone)]
enum Factor {
    Const(bool),
    Expr(BinaryExpr),
}

pub struct Formulation {
    pub problem: MilpProblem,
    k: usize,
    horizon: usize,
    slots: Vec<Vec<Slot>>,
    /// Every variable owned by each loop, link choices first.
    loop_vars: Vec<Vec<usize>>,
    /// Indices of the capacity rows in `problem.le_constraints`.
    capacity_rows: Vec<usize>,
}

impl Formulation {
    pub fn build(spec: &ProgramSpec) -> Result<Self> {
        let ProgramSpec { k, horizon, net, .. } = *spec;
        let links = net.num_links();
        if k >= horizon {
            return Err(Error::config(format!("decision time {k} is outside the horizon {horizon}")));
        }
        let mut p = MilpProblem::new(0);
        p.var_names = Some(Vec::new());

        let mut slots: Vec<Vec<Slot>> = Vec::with_capacity(spec.loops.len());
        for (i, lp) in spec.loops.iter().enumerate() {
            if lp.history.len() < k {
                return Err(Error::internal(format!("loop {i} history stops before time {k}")));
            }
            if lp.allowed.len() != horizon - k {
                return Err(Error::internal(format!("loop {i} has {} allowed sets for {} steps", lp.allowed.len(), horizon - k)));
            }
            let mut row: Vec<Slot> = lp.history[..k].iter().map(|&l| Slot::Known(l)).collect();
            for (off, allowed) in lp.allowed.iter().enumerate() {
                let s = k + off;
                if allowed.len() != links || !allowed.iter().any(|&a| a) {
                    return Err(Error::internal(format!("loop {i} has no allowed link at time {s}")));
                }
                let vars: Vec<Option<usize>> = (0..links)
                    .map(|d| {
                        allowed[d].then(|| {
                            p.add_var(lp.weight * net.prices[d], Some(format!("theta[{i},{s},{d}]")))
                        })
                    })
                    .collect();
                row.push(Slot::Decision(vars));
            }
            slots.push(row);
        }

        for row in &slots {
            for slot in &row[k..] {
                if let Slot::Decision(vars) = slot {
                    p.add_eq(vars.iter().flatten().map(|&v| (v, 1.0)).collect(), 1.0);
                }
            }
        }

        let mut loop_vars: Vec<Vec<usize>> = slots
            .iter()
            .map(|row| {
                row.iter()
                    .flat_map(|slot| match slot {
                        Slot::Decision(vars) => vars.iter().flatten().copied().collect(),
                        Slot::Known(_) => Vec::new(),
                    })
                    .collect()
            })
            .collect();

        let first_capacity_row = p.le_constraints.len();
        if spec.capacity {
            for s in k..horizon {
                for d in 0..links {
                    let terms: Vec<(usize, f64)> = slots
                        .iter()
                        .filter_map(|row| match &row[s] {
                            Slot::Decision(vars) => vars[d].map(|v| (v, 1.0)),
                            Slot::Known(_) => None,
                        })
                        .collect();
                    if terms.len() > net.capacities[d] {
                        p.add_le(terms, net.capacities[d] as f64);
                    }
                }
            }
        }

        let capacity_rows = (first_capacity_row..p.le_constraints.len()).collect();

        for (i, lp) in spec.loops.iter().enumerate() {
            let Some(costs) = lp.costs else { continue };
            if costs.len() < horizon {
                return Err(Error::internal(format!("loop {i} cost table is shorter than the horizon")));
            }
            let first_aux = p.num_vars;
            for t in k..horizon {
                add_selectors(&mut p, &slots[i], costs, lp.weight, i, t, net.max_delay, spec.encoding)?;
            }
            loop_vars[i].extend(first_aux..p.num_vars);
        }

        Ok(Self {
            problem: p,
            k,
            horizon,
            slots,
            loop_vars,
            capacity_rows,
        })
    }

    /// One block per loop, tied together by the capacity rows.
    pub fn decomposition(&self) -> Decomposition {
        Decomposition {
            blocks: self.loop_vars.clone(),
            coupling: self.capacity_rows.clone(),
        }
    }

    /// The full assignment that picks `links[i]` for loop `i` over `[k, T)`.
    /// Freshness variables take the cheapest values the rows allow, which is
    /// the value the program would give them.
    pub fn encode(&self, links: &[Vec<LinkSelection>]) -> Result<Vec<u8>> {
        if links.len() != self.slots.len() {
            return Err(Error::internal(format!("{} link rows for {} loops", links.len(), self.slots.len())));
        }
        let p = &self.problem;
        let mut x = vec![0u8; p.num_vars];
        let mut is_choice = vec![false; p.num_vars];
        for (i, row) in self.slots.iter().enumerate() {
            if links[i].len() != self.horizon - self.k {
                return Err(Error::internal(format!("loop {i} has {} links to encode", links[i].len())));
            }
            for (off, slot) in row[self.k..self.horizon].iter().enumerate() {
                let Slot::Decision(vars) = slot else { continue };
                vars.iter().flatten().for_each(|&v| is_choice[v] = true);
                let d = links[i][off].delay();
                match vars.get(d).copied().flatten() {
                    Some(v) => x[v] = 1,
                    None => {
                        return Err(Error::internal(format!(
                            "loop {i} may not use link {d} at time {}",
                            self.k + off
                        )))
                    }
                }
            }
        }
        let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); p.num_vars];
        for (r, c) in p.le_constraints.iter().enumerate() {
            for &(j, _) in &c.terms {
                if !is_choice[j] {
                    rows_of[j].push(r);
                }
            }
        }
        for j in (0..p.num_vars).filter(|&j| !is_choice[j]) {
            let violated = rows_of[j].iter().any(|&r| {
                let c = &p.le_constraints[r];
                c.activity(&x) > c.rhs + 1e-9
            });
            x[j] = u8::from(violated);
        }
        if !p.is_feasible(&x) {
            return Err(Error::internal("encoded links break a row of the program"));
        }
        Ok(x)
    }

    /// Links chosen for times `[k, T)`, one row per loop.
    pub fn decode(&self, assignment: &[u8]) -> Result<Vec<Vec<LinkSelection>>> {
        self.slots
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row[self.k..self.horizon]
                    .iter()
                    .enumerate()
                    .map(|(off, slot)| match slot {
                        Slot::Known(l) => Ok(*l),
                        Slot::Decision(vars) => {
                            let chosen: Vec<usize> = (0..vars.len())
                                .filter(|&d| vars[d].is_some_and(|v| assignment[v] == 1))
                                .collect();
                            match chosen.as_slice() {
                                [d] => Ok(LinkSelection(*d)),
                                _ => Err(Error::internal(format!(
                                    "loop {i} time {} selects links {chosen:?}",
                                    self.k + off
                                ))),
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn num_decision_vars(&self) -> usize {
        self.slots
            .iter()
            .flat_map(|row| row.iter())
            .map(|s| match s {
                Slot::Decision(v) => v.iter().flatten().count(),
                Slot::Known(_) => 0,
            })
            .sum()
    }
}

fn arrived(slot: &Slot, d: usize) -> Factor {
    match slot {
        Slot::Known(l) => Factor::Const(l.delay() <= d),
        Slot::Decision(vars) => {
            let within: Vec<usize> = vars[..=d.min(vars.len() - 1)].iter().flatten().copied().collect();
            let total = vars.iter().flatten().count();
            if within.is_empty() {
                Factor::Const(false)
            } else if within.len() == total {
                Factor::Const(true)
            } else {
                Factor::Expr(BinaryExpr::sum(within))
            }
        }
    }
}

fn not_arrived(slot: &Slot, d: usize) -> Factor {
    match arrived(slot, d) {
        Factor::Const(v) => Factor::Const(!v),
        Factor::Expr(e) => Factor::Expr(BinaryExpr {
            terms: e.terms.iter().map(|&(j, a)| (j, -a)).collect(),
            constant: 1.0 - e.constant,
        }),
    }
}

#[allow(clippy::too_many_arguments)]
fn add_selectors(
    p: &mut MilpProblem,
    row: &[Slot],
    costs: &ErrorCosts,
    weight: f64,
    loop_idx: usize,
    t: usize,
    max_delay: usize,
    encoding: Encoding,
) -> Result<()> {
    let max_age = max_delay.min(t + 1);
    if encoding == Encoding::Staleness {
        add_staleness(p, row, costs, weight, loop_idx, t, max_age);
        return Ok(());
    }
    let mut selector_vars = Vec::new();
    let mut constant_ones = 0usize;
    for j in 0..=max_age {
        let prior = j == t + 1;
        let mut factors: Vec<Factor> = (0..j.min(t + 1)).map(|d| not_arrived(&row[t - d], d)).collect();
        if !prior {
            factors.push(arrived(&row[t - j], j));
        }
        if factors.iter().any(|f| matches!(f, Factor::Const(false))) {
            continue;
        }
        let cost = weight * costs[t][j];
        let exprs: Vec<BinaryExpr> = factors
            .into_iter()
            .filter_map(|f| match f {
                Factor::Expr(e) => Some(e),
                Factor::Const(_) => None,
            })
            .collect();
        if exprs.is_empty() {
            constant_ones += 1;
            p.offset += cost;
            continue;
        }
        let z = p.add_var(cost, Some(format!("b[{loop_idx},{t},{j}]")));
        selector_vars.push(z);
        p.le_constraints.extend(linearize_binary_product(z, &exprs));
    }
    match (constant_ones, selector_vars.is_empty()) {
        (1, true) => Ok(()),
        (0, false) => {
            p.add_eq(selector_vars.iter().map(|&v| (v, 1.0)).collect(), 1.0);
            Ok(())
        }
        _ => Err(Error::internal(format!(
            "freshness selectors at loop {loop_idx}, time {t} do not partition: {constant_ones} fixed, {} free",
            selector_vars.len()
        ))),
    }
}

fn add_staleness(
    p: &mut MilpProblem,
    row: &[Slot],
    costs: &ErrorCosts,
    weight: f64,
    loop_idx: usize,
    t: usize,
    max_age: usize,
) {
    let mut younger: Vec<(usize, f64)> = Vec::new();
    for l in 1..=max_age {
        let j = l - 1;
        match arrived(&row[t - j], j) {
            Factor::Const(true) => return,
            Factor::Const(false) => {}
            Factor::Expr(e) => younger.extend(e.terms),
        }
        let increment = weight * (costs[t][l] - costs[t][l - 1]);
        if increment <= 0.0 {
            continue;
        }
        if younger.is_empty() {
            p.offset += increment;
            continue;
        }
        let y = p.add_var(increment, Some(format!("y[{loop_idx},{t},{l}]")));
        let mut terms: Vec<(usize, f64)> = younger.iter().map(|&(v, a)| (v, -a)).collect();
        terms.push((y, -1.0));
        p.add_le(terms, -1.0);
    }
}

/// `[max(0, θ − α), min(θ + β, D)]` as a mask over links.
pub fn tolerance_window(requested: LinkSelection, alpha: usize, beta: usize, max_delay: usize) -> Vec<bool> {
    let lo = requested.delay().saturating_sub(alpha);
    let hi = (requested.delay() + beta).min(max_delay);
    (0..=max_delay).map(|d| d >= lo && d <= hi).collect()
}
