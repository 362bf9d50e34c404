//! Centralized link allocation under capacity and tolerance constraints.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::delay_policy::PlanMode;
use crate::error::{Error, Result};
use crate::estimator::freshest_age;
use crate::formulation::{tolerance_window, Encoding, ErrorCosts, Formulation, LoopSpec, ProgramSpec};
use crate::lti::{LinkSelection, NetworkModel};
use crate::milp::{
    components, lagrangian_bound, objective_tolerance, solve_with, write_lp_file, MilpProblem, MilpSolution,
    SolveStatus, SolverOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationRegime {
    AwareImpassive,
    AwareReactive,
    AgnosticImpassive,
    AgnosticReactive,
    DelayInsensitive,
}

impl AllocationRegime {
    pub const ALL: [AllocationRegime; 5] = [
        AllocationRegime::AwareImpassive,
        AllocationRegime::AwareReactive,
        AllocationRegime::AgnosticImpassive,
        AllocationRegime::AgnosticReactive,
        AllocationRegime::DelayInsensitive,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AllocationRegime::AwareImpassive => "aware-impassive",
            AllocationRegime::AwareReactive => "aware-reactive",
            AllocationRegime::AgnosticImpassive => "agnostic-impassive",
            AllocationRegime::AgnosticReactive => "agnostic-reactive",
            AllocationRegime::DelayInsensitive => "delay-insensitive",
        }
    }

    pub fn plan_mode(self) -> PlanMode {
        match self {
            AllocationRegime::AwareReactive | AllocationRegime::AgnosticReactive => PlanMode::Reactive,
            _ => PlanMode::Impassive,
        }
    }

    /// Whether allocations must stay within each loop's tolerance window.
    pub fn uses_tolerances(self) -> bool {
        self != AllocationRegime::DelayInsensitive
    }
}

impl std::fmt::Display for AllocationRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for AllocationRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown regime {s:?}")))
    }
}

/// Links granted to every loop at one time step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub per_sub: Vec<LinkSelection>,
}

impl Allocation {
    pub fn link_counts(&self, num_links: usize) -> Vec<usize> {
        let mut counts = vec![0; num_links];
        for l in &self.per_sub {
            counts[l.0] += 1;
        }
        counts
    }

    /// Checks capacity and, when `tolerances` is given, the tolerance window
    /// around each request.
    pub fn check(
        &self,
        requests: &[LinkSelection],
        tolerances: Option<&[(usize, usize)]>,
        net: &NetworkModel,
    ) -> Result<()> {
        for (d, (&count, &cap)) in self.link_counts(net.num_links()).iter().zip(&net.capacities).enumerate() {
            if count > cap {
                return Err(Error::internal(format!("link {d} carries {count} samples, capacity {cap}")));
            }
        }
        if let Some(tol) = tolerances {
            for (i, ((&got, &asked), &(alpha, beta))) in self.per_sub.iter().zip(requests).zip(tol).enumerate() {
                if !tolerance_window(asked, alpha, beta, net.max_delay)[got.0] {
                    return Err(Error::internal(format!(
                        "loop {i} asked for link {} and got {}, outside tolerance ({alpha}, {beta})",
                        asked.0, got.0
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Allocations for every step in `[start, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationSchedule {
    pub start: usize,
    pub per_step: Vec<Allocation>,
    pub predicted_objective: f64,
    pub status: SolveStatus,
    pub gap: f64,
}

impl AllocationSchedule {
    pub fn at(&self, t: usize) -> &Allocation {
        &self.per_step[t - self.start]
    }
}

/// What the manager knows about one loop in the model-aware regimes.
#[derive(Debug, Clone, Copy)]
pub struct ManagedLoop<'a> {
    pub costs: &'a ErrorCosts,
    pub alpha: usize,
    pub beta: usize,
}

/// Exact feasibility test for one step: with interval windows, an assignment
/// exists iff every contiguous link range `[a, b]` can hold all loops whose
/// window lies inside it. Returns the narrowest violated range.
fn first_overloaded_range(windows: &[Vec<bool>], capacities: &[usize]) -> Option<(usize, usize, usize, usize)> {
    let links = capacities.len();
    let spans: Vec<(usize, usize)> = windows
        .iter()
        .map(|w| {
            let lo = w.iter().position(|&a| a).unwrap_or(0);
            let hi = w.iter().rposition(|&a| a).unwrap_or(0);
            (lo, hi)
        })
        .collect();
    // Narrowest ranges first, so the report points at the tightest link set.
    for width in 0..links {
        for a in 0..links - width {
            let b = a + width;
            let demand = spans.iter().filter(|&&(lo, hi)| lo >= a && hi <= b).count();
            let supply: usize = capacities[a..=b].iter().sum();
            if demand > supply {
                return Some((a, b, demand, supply));
            }
        }
    }
    None
}

fn check_feasible(k: usize, allowed: &[Vec<Vec<bool>>], net: &NetworkModel) -> Result<()> {
    let steps = allowed.first().map_or(0, |a| a.len());
    for off in 0..steps {
        let windows: Vec<Vec<bool>> = allowed.iter().map(|a| a[off].clone()).collect();
        if let Some((a, b, demand, supply)) = first_overloaded_range(&windows, &net.capacities) {
            return Err(Error::AllocationInfeasible {
                time: k + off,
                link: a,
                detail: format!("{demand} loops can only use links {a}..={b}, which hold {supply}"),
            });
        }
    }
    Ok(())
}

fn transpose(per_loop: Vec<Vec<LinkSelection>>, steps: usize) -> Vec<Allocation> {
    (0..steps)
        .map(|off| Allocation {
            per_sub: per_loop.iter().map(|row| row[off]).collect(),
        })
        .collect()
}

struct Request<'a> {
    history: &'a [LinkSelection],
    allowed: Vec<Vec<bool>>,
    costs: Option<&'a ErrorCosts>,
    weight: f64,
}

fn solve_allocation(
    k: usize,
    horizon: usize,
    net: &NetworkModel,
    requests: Vec<Request>,
    opts: &SolverOptions,
) -> Result<AllocationSchedule> {
    if requests.is_empty() {
        return Err(Error::config("allocation needs at least one loop"));
    }
    let allowed: Vec<Vec<Vec<bool>>> = requests.iter().map(|r| r.allowed.clone()).collect();
    check_feasible(k, &allowed, net)?;
    let spec = ProgramSpec {
        k,
        horizon,
        net,
        loops: requests
            .into_iter()
            .map(|r| LoopSpec {
                history: r.history,
                allowed: r.allowed,
                costs: r.costs,
                weight: r.weight,
            })
            .collect(),
        capacity: true,
        encoding: Encoding::Staleness,
    };
    let f = Formulation::build(&spec)?;
    if let Some(dir) = &opts.dump_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_lp_file(&f.problem, &dir.join(format!("allocation-k{k:03}.lp")))?;
    }
    let largest = components(&f.problem).iter().map(Vec::len).max().unwrap_or(0);
    let sol = if largest > opts.exact_threshold && f.problem.time_limit.is_none() {
        solve_coupled(&f, &spec, opts)?
    } else {
        solve_with(&f.problem, opts)?
    };
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::AllocationInfeasible {
            time: k,
            link: 0,
            detail: "solver proved the allocation program infeasible".into(),
        });
    }
    Ok(AllocationSchedule {
        start: k,
        per_step: transpose(f.decode(&sol.assignment)?, horizon - k),
        predicted_objective: sol.objective_value,
        status: sol.status,
        gap: sol.gap,
    })
}

/// Subgradient iterations allowed on one coupled program.
const DUAL_ITERATIONS: usize = 200;
const MAX_SWEEPS: usize = 20;

/// Weighted price plus freshness cost of one loop's full link row over `[k, T)`.
fn row_cost(row: &[LinkSelection], lp: &LoopSpec, net: &NetworkModel, k: usize) -> f64 {
    let freshness = |t: usize| lp.costs.map_or(0.0, |c| c[t][freshest_age(row, t, net.max_delay)]);
    lp.weight * (k..row.len()).map(|t| net.price(row[t]) + freshness(t)).sum::<f64>()
}

/// Local search over single steps: each pass re-solves the assignment at
/// one time exactly, holding every other time fixed. The first pass repairs
/// any capacity violations in `start`; later passes only accept strict
/// improvements, so the search terminates.
fn improve_by_steps(spec: &ProgramSpec, start: Vec<Vec<LinkSelection>>) -> Result<Vec<Vec<LinkSelection>>> {
    let ProgramSpec { k, horizon, net, .. } = *spec;
    let links = net.num_links();
    let mut rows: Vec<Vec<LinkSelection>> = spec
        .loops
        .iter()
        .zip(start)
        .map(|(lp, tail)| lp.history[..k].iter().copied().chain(tail).collect())
        .collect();
    let exact = SolverOptions {
        exact_threshold: usize::MAX,
        ..SolverOptions::default()
    };
    for sweep in 0..MAX_SWEEPS {
        let mut changed = false;
        for s in k..horizon {
            let allowed = |i: usize, d: usize| spec.loops[i].allowed[s - k][d];
            let mut p = MilpProblem::new(0);
            let mut var_of = vec![vec![None; links]; rows.len()];
            let mut current = 0.0;
            for (i, lp) in spec.loops.iter().enumerate() {
                let mut row = rows[i].clone();
                for d in (0..links).filter(|&d| allowed(i, d)) {
                    row[s] = LinkSelection(d);
                    let c = row_cost(&row, lp, net, k);
                    if d == rows[i][s].delay() {
                        current += c;
                    }
                    var_of[i][d] = Some(p.add_var(c, None));
                }
                p.add_eq(var_of[i].iter().flatten().map(|&v| (v, 1.0)).collect(), 1.0);
            }
            let mut overloaded = false;
            for d in 0..links {
                let terms: Vec<(usize, f64)> = var_of.iter().filter_map(|v| v[d]).map(|v| (v, 1.0)).collect();
                overloaded |= rows.iter().filter(|r| r[s].delay() == d).count() > net.capacities[d];
                if terms.len() > net.capacities[d] {
                    p.add_le(terms, net.capacities[d] as f64);
                }
            }
            overloaded |= rows.iter().enumerate().any(|(i, r)| !allowed(i, r[s].delay()));
            let sol = solve_with(&p, &exact)?;
            if sol.status != SolveStatus::Optimal {
                return Err(Error::AllocationInfeasible {
                    time: s,
                    link: 0,
                    detail: "no assignment fits the capacities at this step".into(),
                });
            }
            if overloaded || sol.objective_value < current - objective_tolerance(current) {
                for (i, row) in rows.iter_mut().enumerate() {
                    let d = (0..links)
                        .find(|&d| var_of[i][d].is_some_and(|v| sol.assignment[v] == 1))
                        .ok_or_else(|| Error::internal("assignment left a loop without a link"))?;
                    changed |= row[s].delay() != d;
                    row[s] = LinkSelection(d);
                }
            }
        }
        if !changed && sweep > 0 {
            break;
        }
    }
    Ok(rows.into_iter().map(|r| r[k..].to_vec()).collect())
}

/// Programs too large for exact branch-and-bound: the step search gives the
/// incumbent and the Lagrangian dual of the capacity rows gives the bound.
fn solve_coupled(f: &Formulation, spec: &ProgramSpec, opts: &SolverOptions) -> Result<MilpSolution> {
    let p = &f.problem;
    let deadline = Instant::now() + opts.default_time_limit;
    let dec = f.decomposition();
    let incumbent_from = |relaxed: &[u8]| -> Result<(Vec<u8>, f64)> {
        let links = improve_by_steps(spec, f.decode(relaxed)?)?;
        let x = f.encode(&links)?;
        let value = p.evaluate(&x);
        Ok((x, value))
    };
    let uncoupled = lagrangian_bound(p, &dec, f64::INFINITY, 0, None)?;
    let (mut best, mut upper) = incumbent_from(&uncoupled.relaxed)?;
    let dual = lagrangian_bound(p, &dec, upper, DUAL_ITERATIONS, Some(deadline))?;
    for relaxed in [&uncoupled, &dual].into_iter().filter(|o| o.proven_optimal).map(|o| &o.relaxed) {
        let value = p.evaluate(relaxed);
        if value < upper {
            (best, upper) = (relaxed.clone(), value);
        }
    }
    let (x, value) = incumbent_from(&dual.relaxed)?;
    if value < upper - objective_tolerance(upper) {
        (best, upper) = (x, value);
    }
    let lower = uncoupled.bound.max(dual.bound);
    let certified = uncoupled.proven_optimal || dual.proven_optimal || upper - lower <= objective_tolerance(upper);
    Ok(MilpSolution {
        status: if certified { SolveStatus::Optimal } else { SolveStatus::TimeLimitIncumbent },
        assignment: best,
        objective_value: upper,
        gap: if certified { 0.0 } else { ((upper - lower) / upper.abs().max(1.0)).max(0.0) },
        nodes: dual.iterations,
        node_log: Vec::new(),
    })
}

fn windows_for(requests: &[LinkSelection], alpha: usize, beta: usize, max_delay: usize) -> Vec<Vec<bool>> {
    requests.iter().map(|&r| tolerance_window(r, alpha, beta, max_delay)).collect()
}

fn check_shapes(k: usize, horizon: usize, requests: &[Vec<LinkSelection>], history: &[Vec<LinkSelection>], n: usize) -> Result<()> {
    if requests.len() != n || (k > 0 && history.len() != n) {
        return Err(Error::Dimension {
            context: "allocation loops",
            expected: n.to_string(),
            actual: format!("{} requests, {} histories", requests.len(), history.len()),
        });
    }
    if let Some(r) = requests.iter().find(|r| r.len() != horizon - k) {
        return Err(Error::Dimension {
            context: "allocation requests",
            expected: (horizon - k).to_string(),
            actual: r.len().to_string(),
        });
    }
    Ok(())
}

/// Model-aware allocation over `[k, T)` with the realized allocations before
/// `k` fixed. `requests[i]` holds loop `i`'s requested links for `[k, T)`.
/// With `k = 0` this is the offline program; the online variant re-solves it
/// at every step and applies only the first allocation.
pub fn allocate_aware(
    k: usize,
    requests: &[Vec<LinkSelection>],
    history: &[Vec<LinkSelection>],
    loops: &[ManagedLoop],
    net: &NetworkModel,
    opts: &SolverOptions,
) -> Result<AllocationSchedule> {
    let n = loops.len();
    let horizon = k + requests.first().map_or(0, |r| r.len());
    check_shapes(k, horizon, requests, history, n)?;
    let reqs = loops
        .iter()
        .enumerate()
        .map(|(i, lp)| Request {
            history: if k == 0 { &[] } else { &history[i][..k] },
            allowed: windows_for(&requests[i], lp.alpha, lp.beta, net.max_delay),
            costs: Some(lp.costs),
            weight: 1.0 / n as f64,
        })
        .collect();
    solve_allocation(k, horizon, net, reqs, opts)
}

pub fn allocate_aware_impassive(
    requests: &[Vec<LinkSelection>],
    loops: &[ManagedLoop],
    net: &NetworkModel,
    opts: &SolverOptions,
) -> Result<AllocationSchedule> {
    allocate_aware(0, requests, &[], loops, net, opts)
}

/// Allocation applied at step `k` by the online model-aware manager.
pub fn allocate_aware_reactive(
    k: usize,
    requests: &[Vec<LinkSelection>],
    history: &[Vec<LinkSelection>],
    loops: &[ManagedLoop],
    net: &NetworkModel,
    opts: &SolverOptions,
) -> Result<(Allocation, AllocationSchedule)> {
    let schedule = allocate_aware(k, requests, history, loops, net, opts)?;
    Ok((schedule.per_step[0].clone(), schedule))
}

/// Price-only allocation for a manager that knows nothing about the plants.
/// `Impassive` solves `[0, T)` once; `Reactive` solves `[k, T)` for the
/// current requests.
pub fn allocate_agnostic(
    mode: PlanMode,
    k: usize,
    requests: &[Vec<LinkSelection>],
    tolerances: &[(usize, usize)],
    net: &NetworkModel,
    opts: &SolverOptions,
) -> Result<AllocationSchedule> {
    if mode == PlanMode::Impassive && k != 0 {
        return Err(Error::config("the offline agnostic allocation starts at time 0"));
    }
    let n = tolerances.len();
    let horizon = k + requests.first().map_or(0, |r| r.len());
    check_shapes(k, horizon, requests, &vec![Vec::new(); n], n)?;
    let reqs = tolerances
        .iter()
        .enumerate()
        .map(|(i, &(alpha, beta))| Request {
            history: &[],
            allowed: windows_for(&requests[i], alpha, beta, net.max_delay),
            costs: None,
            weight: 1.0 / n as f64,
        })
        .collect();
    // Past allocations cannot change prices, so only [k, T) is modelled.
    let shifted = solve_allocation(0, horizon - k, net, reqs, opts)?;
    Ok(AllocationSchedule { start: k, ..shifted })
}

pub fn validate_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Dimension {
            context: "delay-insensitive weights",
            expected: n.to_string(),
            actual: weights.len().to_string(),
        });
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::config("weights must be positive"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Weighted allocation with no tolerance coupling to the requests, over
/// `[k, T)` with allocations before `k` fixed.
pub fn allocate_delay_insensitive_from(
    k: usize,
    history: &[Vec<LinkSelection>],
    weights: &[f64],
    costs: &[&ErrorCosts],
    net: &NetworkModel,
    horizon: usize,
    opts: &SolverOptions,
) -> Result<AllocationSchedule> {
    let n = costs.len();
    validate_weights(weights, n)?;
    if k > 0 && history.iter().any(|h| h.len() < k) {
        return Err(Error::internal("delay-insensitive history is shorter than k"));
    }
    let reqs = (0..n)
        .map(|i| Request {
            history: if k == 0 { &[] } else { &history[i][..k] },
            allowed: vec![vec![true; net.num_links()]; horizon - k],
            costs: Some(costs[i]),
            weight: weights[i],
        })
        .collect();
    solve_allocation(k, horizon, net, reqs, opts)
}

/// Solved once at time 0; every suffix of the result is optimal for the
/// program restarted at that time.
pub fn allocate_delay_insensitive(
    weights: &[f64],
    costs: &[&ErrorCosts],
    net: &NetworkModel,
    horizon: usize,
    opts: &SolverOptions,
) -> Result<AllocationSchedule> {
    allocate_delay_insensitive_from(0, &[], weights, costs, net, horizon, opts)
}

fn indicator(v: usize) -> usize {
    usize::from(v != 0)
}

/// Capacity on link `d` that guarantees the tolerance-aware allocation is
/// feasible: `⌊N / (1 + h/N)⌋`, where `h` counts, per loop, the directions in
/// which it can be moved off `ℓ_d`.
pub fn feasibility_bound(d: usize, tolerances: &[(usize, usize)], n: usize, max_delay: usize) -> usize {
    assert!(d <= max_delay, "link {d} beyond max delay {max_delay}");
    assert_eq!(tolerances.len(), n, "one tolerance pair per loop");
    if n == 0 {
        return 0;
    }
    let h: usize = tolerances
        .iter()
        .map(|&(alpha, beta)| match (alpha != 0, beta != 0) {
            (true, false) => indicator(d * alpha),
            (false, true) => indicator((max_delay - d) * beta),
            (true, true) => indicator(d) * indicator(d * alpha) + indicator(max_delay - d) * indicator((max_delay - d) * beta),
            (false, false) => 0,
        })
        .sum();
    // ⌊N / (1 + h/N)⌋ = ⌊N² / (N + h)⌋ in exact integer arithmetic.
    n * n / (n + h)
}
