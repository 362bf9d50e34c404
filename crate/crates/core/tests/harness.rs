//! End-to-end behaviour of the simulation harness: event order, cost
//! bookkeeping, metrics and the bundled experiment configurations.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use ncsim_core::estimator::b_coefficients;
use ncsim_core::lqg::control_input;
use ncsim_core::resource_manager::AllocationRegime as R;
use ncsim_core::sim::metrics::{
    average_deviation, fleet_cost, link_utilization, local_cost, social_costs, MeanStd, Pricing,
};
use ncsim_core::sim::{
    compute_schedule, run_experiment, simulate, write_outputs, ExperimentConfig, ExperimentResult, Fleet, Schedule,
};
use ncsim_core::{LinkSelection, NetworkModel, NoiseStream, PlantModel};

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

/// The desk configuration at reduced replication count, shared by the
/// tests that only look at its schedules and summary statistics.
fn desk() -> &'static (ExperimentConfig, ExperimentResult) {
    static DESK: OnceLock<(ExperimentConfig, ExperimentResult)> = OnceLock::new();
    DESK.get_or_init(|| {
        let mut cfg = config("desk.json");
        cfg.replications = 100;
        let result = run_experiment(&cfg).unwrap();
        (cfg, result)
    })
}

fn links(delays: &[usize]) -> Vec<LinkSelection> {
    delays.iter().copied().map(LinkSelection).collect()
}

fn fixed_schedule(requested: Vec<Vec<LinkSelection>>, allocated: Vec<Vec<LinkSelection>>) -> Schedule {
    Schedule {
        regime: Some(R::AwareImpassive),
        requested,
        allocated,
        solves: Vec::new(),
        comparisons: Vec::new(),
    }
}

#[test]
fn delay_free_network_reproduces_full_information_lqg() {
    let (a, b, q1, q2, r, sw) = (1.2, 0.7, 1.0, 2.0, 0.3, 0.8);
    let models = vec![
        PlantModel::scalar(a, b, q1, q2, r, sw).with_index(0),
        PlantModel::scalar(a, b, q1, q2, r, sw).with_index(1),
    ];
    let net = NetworkModel::new(vec![4.0], vec![2]).unwrap();
    let horizon = 6;
    let fleet = Fleet::new(&models, &net, horizon, vec![0.5, 0.5], Default::default()).unwrap();
    let schedule = compute_schedule(&fleet, Some(R::AwareReactive)).unwrap();
    let trace = simulate(&fleet, &schedule, 17, 3).unwrap();

    // Scalar Riccati gains, computed by hand.
    let mut gains = vec![0.0; horizon];
    let mut p = q2;
    for k in (0..horizon).rev() {
        gains[k] = b * p * a / (r + b * b * p);
        p = q1 + a * a * p - a * b * p * gains[k];
    }
    for (i, lp) in trace.loops.iter().enumerate() {
        let mut rng = NoiseStream::new(17, 3, i as u64);
        let mut x = sw.sqrt() * rng.standard_normal();
        for (k, st) in lp.steps.iter().enumerate() {
            assert_eq!(st.estimate, st.state);
            assert_eq!(st.age, 0);
            assert_eq!(st.input, control_input(&fleet.solutions[i].gains[k], &st.state));
            assert!((st.state[0] - x).abs() < 1e-12);
            x = (a - b * gains[k]) * x + sw.sqrt() * rng.standard_normal();
        }
        assert!((lp.terminal_state[0] - x).abs() < 1e-12);
    }
}

#[test]
fn a_forced_deviation_shows_in_the_controller_window() {
    let models = vec![PlantModel::scalar(1.1, 1.0, 1.0, 1.0, 0.5, 1.0)];
    let net = NetworkModel::new(vec![2.0, 1.0], vec![1, 1]).unwrap();
    let fleet = Fleet::new(&models, &net, 5, vec![1.0], Default::default()).unwrap();
    let requested = links(&[0, 0, 0, 0, 0]);
    let allocated = links(&[0, 1, 1, 0, 0]);
    let schedule = fixed_schedule(vec![requested.clone()], vec![allocated.clone()]);
    let trace = simulate(&fleet, &schedule, 5, 0).unwrap();
    for st in &trace.loops[0].steps {
        let k = st.step;
        let by_allocation = b_coefficients(&allocated, k, 1);
        let by_request = b_coefficients(&requested, k, 1);
        assert_eq!(by_allocation[st.age], 1, "step {k}");
        assert_eq!(st.requested, requested[k]);
        assert_eq!(st.allocated, allocated[k]);
        if k == 1 || k == 2 {
            assert_ne!(by_allocation, by_request);
            assert_eq!(st.age, 1);
            assert_ne!(st.estimate, st.state);
        } else {
            assert_eq!(st.estimate, st.state);
        }
    }
}

#[test]
fn replaying_a_seed_is_bit_identical() {
    let mut cfg = config("desk.json");
    cfg.replications = 4;
    cfg.regimes = vec![R::AwareReactive, R::DelayInsensitive];
    let first = run_experiment(&cfg).unwrap();
    let second = run_experiment(&cfg).unwrap();
    assert_eq!(first.shadow_traces, second.shadow_traces);
    for (a, b) in first.regimes.iter().zip(&second.regimes) {
        assert_eq!(a.traces, b.traces);
        assert_eq!(a.schedule, b.schedule);
    }
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut bytes = Vec::new();
    for (dir, result) in dirs.iter().zip([&first, &second]) {
        cfg.outputs.dir = dir.path().to_path_buf();
        cfg.outputs.emit_svg = false;
        write_outputs(result, &cfg).unwrap();
        bytes.push(std::fs::read(dir.path().join("trace.csv")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn a_noise_free_static_plant_pays_only_for_links() {
    // Covariances must stay positive definite; at 1e-300 every quadratic
    // term underflows against the prices and the sums are exact.
    let models: Vec<PlantModel> = (0..3).map(|i| PlantModel::scalar(0.0, 1.0, 1.0, 1.0, 1.0, 1e-300).with_index(i)).collect();
    let net = NetworkModel::new(vec![5.0, 3.0, 1.0], vec![1, 1, 3]).unwrap();
    let fleet = Fleet::new(&models, &net, 4, vec![1.0 / 3.0; 3], Default::default()).unwrap();
    for regime in [None, Some(R::AgnosticImpassive), Some(R::DelayInsensitive)] {
        let schedule = compute_schedule(&fleet, regime).unwrap();
        let trace = simulate(&fleet, &schedule, 1, 0).unwrap();
        for (i, lp) in trace.loops.iter().enumerate() {
            let paid: f64 = schedule.allocated[i].iter().map(|&l| net.price(l)).sum();
            let asked: f64 = schedule.requested[i].iter().map(|&l| net.price(l)).sum();
            assert_eq!(local_cost(lp, Pricing::Allocated), paid, "{regime:?}");
            assert_eq!(local_cost(lp, Pricing::Requested), asked, "{regime:?}");
        }
    }
}

#[test]
fn granted_requests_cost_the_same_under_either_pricing() {
    let (_, result) = desk();
    for trace in &result.shadow_traces {
        for lp in &trace.loops {
            assert_eq!(local_cost(lp, Pricing::Requested), local_cost(lp, Pricing::Allocated));
        }
    }
}

#[test]
fn a_single_step_cost_unrolls_by_hand() {
    let cfg = config("desk.json");
    let models = cfg.models().unwrap();
    let fleet = Fleet::new(&models, &cfg.network, 1, cfg.weights_or_uniform(), cfg.solver.options()).unwrap();
    let schedule = compute_schedule(&fleet, Some(R::AwareImpassive)).unwrap();
    let trace = simulate(&fleet, &schedule, 99, 7).unwrap();
    let quad = |v: &DVector<f64>, m: &DMatrix<f64>| (v.transpose() * m * v)[(0, 0)];
    for (i, lp) in trace.loops.iter().enumerate() {
        let m = &models[i];
        let s = &lp.steps[0];
        let expected = quad(&lp.terminal_state, &m.q2) + quad(&s.state, &m.q1) + quad(&s.input, &m.r)
            + cfg.network.price(schedule.allocated[i][0]);
        assert!((local_cost(lp, Pricing::Allocated) - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }
}

#[test]
fn constrained_runs_have_nonnegative_social_cost() {
    let (_, result) = desk();
    for r in &result.regimes {
        let j = MeanStd::of(&social_costs(&r.traces, &result.shadow_traces).unwrap());
        assert!(j.mean >= -3.0 * j.stderr, "{}: {} ± {}", r.regime.tag(), j.mean, j.stderr);
        assert_eq!(j, r.social_cost);
    }
}

#[test]
fn standard_error_shrinks_with_the_square_root_of_replications() {
    let cfg = config("analytic.json");
    let models = cfg.models().unwrap();
    let fleet = Fleet::new(&models, &cfg.network, cfg.horizon, cfg.weights_or_uniform(), cfg.solver.options()).unwrap();
    let schedule = compute_schedule(&fleet, Some(R::AwareImpassive)).unwrap();
    let costs: Vec<f64> = (0..1600u64)
        .map(|rep| fleet_cost(&simulate(&fleet, &schedule, cfg.seed, rep).unwrap()))
        .collect();
    let se = |n: usize| MeanStd::of(&costs[..n]).stderr;
    let doubled = se(800) / se(400);
    let quadrupled = se(1600) / se(400);
    assert!((doubled / std::f64::consts::FRAC_1_SQRT_2 - 1.0).abs() <= 0.3, "doubling ratio {doubled}");
    assert!((quadrupled / 0.5 - 1.0).abs() <= 0.3, "quadrupling ratio {quadrupled}");
}

#[test]
fn utilization_examples() {
    let both_slow = link_utilization(&[links(&[3]), links(&[3])], 4);
    assert_eq!(both_slow.iter().map(|row| row[0]).collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 1.0]);
    let single = link_utilization(&[links(&[0, 0, 0]), links(&[0, 0, 0])], 1);
    assert_eq!(single, vec![vec![1.0; 3]]);

    let (cfg, result) = desk();
    for r in &result.regimes {
        assert_eq!(r.utilization.len(), cfg.network.num_links());
        for t in 0..cfg.horizon {
            let total: f64 = r.utilization.iter().map(|row| row[t]).sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn deviation_examples() {
    let one_moved = fixed_schedule(vec![links(&[0]), links(&[1])], vec![links(&[2]), links(&[1])]);
    assert_eq!(average_deviation(&one_moved), vec![1.0]);
    let granted = fixed_schedule(vec![links(&[0, 2, 1])], vec![links(&[0, 2, 1])]);
    assert_eq!(average_deviation(&granted), vec![0.0; 3]);

    let (cfg, result) = desk();
    let bound = cfg.tolerances().iter().map(|&(a, b)| a.max(b)).max().unwrap();
    for r in result.regimes.iter().filter(|r| r.regime.uses_tolerances()) {
        for (req, got) in r.schedule.requested.iter().zip(&r.schedule.allocated) {
            for (q, g) in req.iter().zip(got) {
                assert!(q.delay().abs_diff(g.delay()) <= bound, "{}", r.regime.tag());
            }
        }
    }
}

#[test]
fn desk_configuration_solves_exactly() {
    let (cfg, result) = desk();
    assert_eq!(result.regimes.len(), cfg.regimes.len());
    for r in &result.regimes {
        assert!(r.schedule.all_optimal(), "{}", r.regime.tag());
        assert_eq!(r.schedule.max_gap(), 0.0, "{}", r.regime.tag());
        assert_eq!(r.traces.len(), 100);
    }
    assert_eq!(result.max_gap(), 0.0);
}

#[test]
fn large_configuration_reports_its_gaps() {
    let mut cfg = config("large.json");
    cfg.replications = 2;
    let started = Instant::now();
    let result = run_experiment(&cfg).unwrap();
    let elapsed = started.elapsed();
    assert_eq!(result.regimes.len(), cfg.regimes.len());
    for r in &result.regimes {
        assert!(!r.schedule.solves.is_empty());
        assert!(r.schedule.solves.iter().all(|s| s.gap.is_finite() && s.gap >= 0.0));
        assert!(r.schedule.max_gap() <= cfg.solver.gap_tolerance, "{}: gap {}", r.regime.tag(), r.schedule.max_gap());
    }
    eprintln!("large experiment with 2 replications took {:.1} s", elapsed.as_secs_f64());
}

#[test]
fn one_regime_gives_one_metrics_block() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("desk.json");
    cfg.replications = 3;
    cfg.regimes = vec![R::AgnosticImpassive];
    cfg.outputs.dir = dir.path().to_path_buf();
    cfg.outputs.emit_svg = false;
    let result = run_experiment(&cfg).unwrap();
    assert_eq!(result.regimes.len(), 1);
    write_outputs(&result, &cfg).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("metrics.csv")).unwrap();
    let mut tags: Vec<String> = reader.records().map(|r| r.unwrap()[0].to_string()).collect();
    tags.dedup();
    assert_eq!(tags, vec!["shadow".to_string(), R::AgnosticImpassive.tag().to_string()]);
}
