//! Per-loop delay control: which link each sample should ask for.
//!
//! The impassive plan is solved once, before anything runs. The reactive plan
//! is re-solved at every step with the allocations that actually happened,
//! and only its first entry is used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::freshest_age;
use crate::formulation::{error_cost_table, Encoding, ErrorCosts, Formulation, LoopSpec, ProgramSpec};
use crate::lqg::RiccatiSolution;
use crate::lti::{LinkSelection, NetworkModel, PlantModel};
use crate::milp::{solve_with, SolveStatus, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanMode {
    Impassive,
    Reactive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayPlan {
    /// First time step covered by `per_step`.
    pub start: usize,
    pub per_step: Vec<LinkSelection>,
    pub predicted_objective: f64,
    pub mode: PlanMode,
    pub status: SolveStatus,
    pub gap: f64,
}

impl DelayPlan {
    pub fn at(&self, t: usize) -> LinkSelection {
        self.per_step[t - self.start]
    }
}

/// Price plus freshness cost of `links` over `[k, T)`, computed straight from
/// the arrival rule. `links` covers `[0, T)`.
pub fn plan_objective(links: &[LinkSelection], costs: &ErrorCosts, net: &NetworkModel, k: usize) -> f64 {
    (k..links.len())
        .map(|t| net.price(links[t]) + costs[t][freshest_age(links, t, net.max_delay)])
        .sum()
}

/// Cached per-loop planning data.
#[derive(Debug, Clone)]
pub struct LoopPlanner<'a> {
    pub net: &'a NetworkModel,
    pub costs: ErrorCosts,
    pub horizon: usize,
}

impl<'a> LoopPlanner<'a> {
    pub fn new(model: &PlantModel, net: &'a NetworkModel, sol: &RiccatiSolution) -> Result<Self> {
        model.validate(Some(net.max_delay))?;
        Ok(Self {
            net,
            costs: error_cost_table(model, sol, net.max_delay)?,
            horizon: sol.horizon(),
        })
    }

    pub fn impassive(&self, opts: &SolverOptions) -> Result<DelayPlan> {
        self.plan(0, &[], PlanMode::Impassive, opts)
    }

    /// Plan over `[k, T)` given the realized allocations `history[..k]`.
    pub fn reactive(&self, k: usize, history: &[LinkSelection], opts: &SolverOptions) -> Result<DelayPlan> {
        self.plan(k, history, PlanMode::Reactive, opts)
    }

    fn plan(&self, k: usize, history: &[LinkSelection], mode: PlanMode, opts: &SolverOptions) -> Result<DelayPlan> {
        let links = self.net.num_links();
        let spec = ProgramSpec {
            k,
            horizon: self.horizon,
            net: self.net,
            loops: vec![LoopSpec {
                history,
                allowed: vec![vec![true; links]; self.horizon - k],
                costs: Some(&self.costs),
                weight: 1.0,
            }],
            capacity: false,
            encoding: Encoding::Staleness,
        };
        let f = Formulation::build(&spec)?;
        let sol = solve_with(&f.problem, opts)?;
        if sol.status == SolveStatus::Infeasible {
            return Err(Error::internal("delay-control program reported infeasible"));
        }
        Ok(DelayPlan {
            start: k,
            per_step: f.decode(&sol.assignment)?.remove(0),
            predicted_objective: sol.objective_value,
            mode,
            status: sol.status,
            gap: sol.gap,
        })
    }
}

pub fn impassive_plan(
    model: &PlantModel,
    net: &NetworkModel,
    sol: &RiccatiSolution,
    opts: &SolverOptions,
) -> Result<DelayPlan> {
    LoopPlanner::new(model, net, sol)?.impassive(opts)
}

pub fn reactive_plan(
    k: usize,
    history: &[LinkSelection],
    model: &PlantModel,
    net: &NetworkModel,
    sol: &RiccatiSolution,
    opts: &SolverOptions,
) -> Result<DelayPlan> {
    LoopPlanner::new(model, net, sol)?.reactive(k, history, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqg::riccati_backward;
    use crate::lti::NoiseStream;
    use nalgebra::DMatrix;

    fn all_sequences(links: usize, len: usize) -> Vec<Vec<LinkSelection>> {
        (0..links.pow(len as u32))
            .map(|mut c| {
                (0..len)
                    .map(|_| {
                        let d = c % links;
                        c /= links;
                        LinkSelection(d)
                    })
                    .collect()
            })
            .collect()
    }

    fn best_by_search(prefix: &[LinkSelection], costs: &ErrorCosts, net: &NetworkModel, horizon: usize) -> f64 {
        let k = prefix.len();
        all_sequences(net.num_links(), horizon - k)
            .into_iter()
            .map(|tail| {
                let full: Vec<LinkSelection> = prefix.iter().copied().chain(tail).collect();
                plan_objective(&full, costs, net, k)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn network(d: usize) -> NetworkModel {
        let prices: Vec<f64> = (0..=d).map(|l| 2.0 * (d - l) as f64 + 0.25).collect();
        NetworkModel::new(prices, vec![1; d + 1]).unwrap()
    }

    #[test]
    fn single_link_has_one_plan() {
        let model = PlantModel::scalar(1.2, 1.0, 1.0, 1.0, 1.0, 1.0);
        let net = NetworkModel::new(vec![3.0], vec![1]).unwrap();
        let sol = riccati_backward(&model, 4).unwrap();
        let plan = impassive_plan(&model, &net, &sol, &SolverOptions::default()).unwrap();
        assert_eq!(plan.per_step, vec![LinkSelection(0); 4]);
        assert!((plan.predicted_objective - 12.0).abs() < 1e-9);
    }

    #[test]
    fn zero_dynamics_choose_the_cheapest_link() {
        let model = PlantModel::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        let net = network(3);
        let sol = riccati_backward(&model, 5).unwrap();
        let plan = impassive_plan(&model, &net, &sol, &SolverOptions::default()).unwrap();
        assert_eq!(plan.per_step, vec![LinkSelection(3); 5]);
    }

    #[test]
    fn unstable_scalar_matches_exhaustive_search() {
        let model = PlantModel::scalar(1.2, 1.0, 1.0, 1.0, 1.0, 1.0);
        let net = network(2);
        let sol = riccati_backward(&model, 3).unwrap();
        let planner = LoopPlanner::new(&model, &net, &sol).unwrap();
        let plan = planner.impassive(&SolverOptions::default()).unwrap();
        let best = best_by_search(&[], &planner.costs, &net, 3);
        assert!((plan.predicted_objective - best).abs() <= 1e-9 * best.abs());
        assert!((plan_objective(&plan.per_step, &planner.costs, &net, 0) - best).abs() <= 1e-9 * best.abs());
    }

    #[test]
    fn reactive_at_start_is_impassive() {
        let model = PlantModel::scalar(1.1, 0.7, 1.0, 2.0, 0.5, 1.3);
        let net = network(2);
        let sol = riccati_backward(&model, 5).unwrap();
        let planner = LoopPlanner::new(&model, &net, &sol).unwrap();
        let opts = SolverOptions::default();
        let imp = planner.impassive(&opts).unwrap();
        let re = planner.reactive(0, &[], &opts).unwrap();
        assert_eq!(imp.per_step, re.per_step);
        assert_eq!(imp.predicted_objective, re.predicted_objective);
    }

    #[test]
    fn granted_history_reproduces_impassive_suffix() {
        let mut rng = NoiseStream::from_seed(17);
        let opts = SolverOptions::default();
        for _ in 0..8 {
            let a = 0.8 + 0.6 * rng.uniform();
            let model = PlantModel::scalar(a, 0.5 + rng.uniform(), 1.0, 1.0 + rng.uniform(), 0.5, 1.0 + rng.uniform());
            let net = network(2);
            let sol = riccati_backward(&model, 5).unwrap();
            let planner = LoopPlanner::new(&model, &net, &sol).unwrap();
            let imp = planner.impassive(&opts).unwrap();
            for k in 1..5 {
                let re = planner.reactive(k, &imp.per_step[..k], &opts).unwrap();
                assert_eq!(re.per_step, imp.per_step[k..].to_vec(), "k = {k}");
                let suffix = plan_objective(&imp.per_step, &planner.costs, &net, k);
                assert!((re.predicted_objective - suffix).abs() <= 1e-9 * (1.0 + suffix));
            }
        }
    }

    #[test]
    fn forced_deviation_replan_matches_enumeration() {
        let model = PlantModel::scalar(1.3, 1.0, 1.0, 1.0, 1.0, 1.0);
        let net = NetworkModel::new(vec![1.0, 0.2], vec![1, 1]).unwrap();
        let sol = riccati_backward(&model, 2).unwrap();
        let planner = LoopPlanner::new(&model, &net, &sol).unwrap();
        let opts = SolverOptions::default();
        let imp = planner.impassive(&opts).unwrap();
        assert_eq!(imp.per_step[0], LinkSelection(0));
        let history = [LinkSelection(1)];
        let re = planner.reactive(1, &history, &opts).unwrap();
        let options: Vec<(LinkSelection, f64)> = [0, 1]
            .iter()
            .map(|&d| (LinkSelection(d), plan_objective(&[history[0], LinkSelection(d)], &planner.costs, &net, 1)))
            .collect();
        let best = options.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);
        assert!((re.predicted_objective - best).abs() < 1e-9);
        let chosen = options.iter().find(|o| o.0 == re.per_step[0]).unwrap();
        assert!((chosen.1 - best).abs() < 1e-9);
    }

    #[test]
    fn reactive_never_worse_than_impassive_suffix() {
        let mut rng = NoiseStream::from_seed(99);
        let opts = SolverOptions::default();
        for _ in 0..10 {
            let model = PlantModel::scalar(0.9 + 0.5 * rng.uniform(), 1.0, 1.0, 1.0, 1.0, 1.0 + rng.uniform());
            let net = network(3);
            let sol = riccati_backward(&model, 6).unwrap();
            let planner = LoopPlanner::new(&model, &net, &sol).unwrap();
            let imp = planner.impassive(&opts).unwrap();
            let history: Vec<LinkSelection> = imp.per_step.iter().map(|l| LinkSelection((l.0 + 1).min(3))).collect();
            for k in 1..6 {
                let re = planner.reactive(k, &history[..k], &opts).unwrap();
                let mut mixed = history[..k].to_vec();
                mixed.extend_from_slice(&imp.per_step[k..]);
                let suffix = plan_objective(&mixed, &planner.costs, &net, k);
                assert!(re.predicted_objective <= suffix + 1e-9 * (1.0 + suffix));
                let mut realized = history[..k].to_vec();
                realized.extend_from_slice(&re.per_step);
                let direct = plan_objective(&realized, &planner.costs, &net, k);
                assert!((direct - re.predicted_objective).abs() <= 1e-9 * (1.0 + direct));
            }
        }
    }

    #[test]
    fn plans_are_one_hot_and_cover_the_window() {
        let model = PlantModel::scalar(1.2, 1.0, 1.0, 1.0, 1.0, 1.0);
        let net = network(3);
        let sol = riccati_backward(&model, 7).unwrap();
        let plan = impassive_plan(&model, &net, &sol, &SolverOptions::default()).unwrap();
        assert_eq!(plan.per_step.len(), 7);
        assert!(plan.per_step.iter().all(|l| l.0 <= 3));
        let re = reactive_plan(3, &plan.per_step[..3], &model, &net, &sol, &SolverOptions::default()).unwrap();
        assert_eq!(re.per_step.len(), 4);
        assert_eq!(re.at(3), re.per_step[0]);
    }
}
