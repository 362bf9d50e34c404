//! Runs every configured regime and writes the result tables.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{NetworkModel, PlantModel};
use crate::resource_manager::AllocationRegime;

use super::config::ExperimentConfig;
use super::episode::{compute_schedule, simulate, EpisodeTrace, Fleet, Schedule};
use super::metrics::{
    average_deviation, fleet_cost, link_utilization, local_cost, social_costs, MeanStd, Pricing,
};
use super::svg::{bar_chart, line_chart, Series};

#[derive(Debug, Clone)]
pub struct RegimeResult {
    pub regime: AllocationRegime,
    pub schedule: Schedule,
    pub traces: Vec<EpisodeTrace>,
    pub fleet_cost: MeanStd,
    pub local_costs: Vec<MeanStd>,
    pub social_cost: MeanStd,
    /// `utilization[d][t]`.
    pub utilization: Vec<Vec<f64>>,
    pub deviation: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub horizon: usize,
    pub num_links: usize,
    pub shadow: Schedule,
    pub shadow_traces: Vec<EpisodeTrace>,
    pub shadow_cost: MeanStd,
    pub regimes: Vec<RegimeResult>,
}

impl ExperimentResult {
    pub fn regime(&self, r: AllocationRegime) -> Option<&RegimeResult> {
        self.regimes.iter().find(|x| x.regime == r)
    }

    /// Largest relative gap reported by any solve.
    pub fn max_gap(&self) -> f64 {
        self.regimes
            .iter()
            .map(|r| r.schedule.max_gap())
            .fold(self.shadow.max_gap(), f64::max)
    }
}

fn replicate(fleet: &Fleet, schedule: &Schedule, seed: u64, replications: usize) -> Result<Vec<EpisodeTrace>> {
    (0..replications as u64)
        .into_par_iter()
        .map(|rep| simulate(fleet, schedule, seed, rep))
        .collect()
}

fn per_loop_costs(traces: &[EpisodeTrace], n: usize) -> Vec<MeanStd> {
    (0..n)
        .map(|i| {
            let v: Vec<f64> = traces.iter().map(|t| local_cost(&t.loops[i], Pricing::Allocated)).collect();
            MeanStd::of(&v)
        })
        .collect()
}

fn regime_options(cfg: &ExperimentConfig, tag: &str) -> crate::milp::SolverOptions {
    let mut opts = cfg.solver.options();
    opts.dump_dir = opts.dump_dir.map(|d| d.join(tag));
    opts
}

/// Shadow run first, then each regime, all at the same seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let models: Vec<PlantModel> = cfg.models()?;
    let net: &NetworkModel = &cfg.network;
    let weights = cfg.weights_or_uniform();
    let n = models.len();

    let shadow_fleet = Fleet::new(&models, net, cfg.horizon, weights.clone(), regime_options(cfg, "shadow"))?;
    let shadow = compute_schedule(&shadow_fleet, None)?;
    let shadow_traces = replicate(&shadow_fleet, &shadow, cfg.seed, cfg.replications)?;
    let shadow_cost = MeanStd::of(
        &shadow_traces
            .iter()
            .map(|t| t.loops.iter().map(|l| local_cost(l, Pricing::Requested)).sum::<f64>() / n as f64)
            .collect::<Vec<_>>(),
    );

    let mut regimes = Vec::with_capacity(cfg.regimes.len());
    for &regime in &cfg.regimes {
        let fleet = Fleet::new(&models, net, cfg.horizon, weights.clone(), regime_options(cfg, regime.tag()))?;
        let schedule = compute_schedule(&fleet, Some(regime))?;
        let traces = replicate(&fleet, &schedule, cfg.seed, cfg.replications)?;
        let social = social_costs(&traces, &shadow_traces)?;
        regimes.push(RegimeResult {
            regime,
            fleet_cost: MeanStd::of(&traces.iter().map(fleet_cost).collect::<Vec<_>>()),
            local_costs: per_loop_costs(&traces, n),
            social_cost: MeanStd::of(&social),
            utilization: link_utilization(&schedule.allocated, net.num_links()),
            deviation: average_deviation(&schedule),
            schedule,
            traces,
        });
    }
    Ok(ExperimentResult {
        horizon: cfg.horizon,
        num_links: net.num_links(),
        shadow,
        shadow_traces,
        shadow_cost,
        regimes,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    regime: String,
    replication: u64,
    seed: u64,
    step: usize,
    subsystem: usize,
    state: String,
    estimate: String,
    input: String,
    requested_delay: usize,
    allocated_delay: usize,
    age: usize,
    stage_cost: f64,
    price: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricRow {
    pub regime: String,
    pub metric: String,
    pub subsystem: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UtilizationRow {
    pub regime: String,
    pub step: usize,
    pub delay: usize,
    pub share: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DeviationRow {
    pub regime: String,
    pub step: usize,
    pub average_deviation: f64,
}

fn join(v: &nalgebra::DVector<f64>) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn write_traces(path: &Path, result: &ExperimentResult, limit: Option<usize>) -> Result<()> {
    let mut w = writer(path)?;
    let groups = std::iter::once(("shadow", &result.shadow_traces))
        .chain(result.regimes.iter().map(|r| (r.regime.tag(), &r.traces)));
    for (tag, traces) in groups {
        for tr in traces.iter().take(limit.unwrap_or(usize::MAX)) {
            for (i, lp) in tr.loops.iter().enumerate() {
                for s in &lp.steps {
                    w.serialize(TraceRow {
                        regime: tag.to_string(),
                        replication: tr.replication,
                        seed: tr.seed,
                        step: s.step,
                        subsystem: i,
                        state: join(&s.state),
                        estimate: join(&s.estimate),
                        input: join(&s.input),
                        requested_delay: s.requested.delay(),
                        allocated_delay: s.allocated.delay(),
                        age: s.age,
                        stage_cost: s.stage_cost,
                        price: s.allocated_price,
                    })
                    ?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn metric(regime: &str, metric: &str, subsystem: String, m: MeanStd) -> MetricRow {
    MetricRow {
        regime: regime.to_string(),
        metric: metric.to_string(),
        subsystem,
        mean: m.mean,
        stderr: m.stderr,
        n: m.n,
    }
}

fn metric_rows(result: &ExperimentResult) -> Vec<MetricRow> {
    let mut rows = vec![metric("shadow", "fleet_cost", "all".into(), result.shadow_cost)];
    for r in &result.regimes {
        let tag = r.regime.tag();
        rows.push(metric(tag, "fleet_cost", "all".into(), r.fleet_cost));
        rows.push(metric(tag, "social_cost", "all".into(), r.social_cost));
        for (i, c) in r.local_costs.iter().enumerate() {
            rows.push(metric(tag, "local_cost", i.to_string(), *c));
        }
        let gap = MeanStd {
            mean: r.schedule.max_gap(),
            stderr: 0.0,
            n: r.schedule.solves.len(),
        };
        rows.push(metric(tag, "max_gap", "all".into(), gap));
    }
    rows
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

/// Writes `trace.csv`, `metrics.csv`, `utilization.csv`, `deviation.csv`
/// and, when asked, SVG charts. Returns the files written.
pub fn write_outputs(result: &ExperimentResult, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = &cfg.outputs.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let p = dir.join("trace.csv");
    write_traces(&p, result, cfg.outputs.trace_replications)?;
    written.push(p);

    let p = dir.join("metrics.csv");
    write_rows(&p, &metric_rows(result))?;
    written.push(p);

    let mut util = Vec::new();
    let mut dev = Vec::new();
    for r in &result.regimes {
        for (d, row) in r.utilization.iter().enumerate() {
            for (t, &share) in row.iter().enumerate() {
                util.push(UtilizationRow {
                    regime: r.regime.tag().into(),
                    step: t,
                    delay: d,
                    share,
                });
            }
        }
        for (t, &v) in r.deviation.iter().enumerate() {
            dev.push(DeviationRow {
                regime: r.regime.tag().into(),
                step: t,
                average_deviation: v,
            });
        }
    }
    let p = dir.join("utilization.csv");
    write_rows(&p, &util)?;
    written.push(p);
    let p = dir.join("deviation.csv");
    write_rows(&p, &dev)?;
    written.push(p);

    if cfg.outputs.emit_svg {
        written.extend(plot_directory(dir)?);
    }
    Ok(written)
}

fn regimes_in_order<'r>(tags: impl Iterator<Item = &'r str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for tag in tags {
        if !out.iter().any(|t| t == tag) {
            out.push(tag.to_string());
        }
    }
    out
}

fn write_svg(path: PathBuf, svg: String, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Draws the chart(s) for one output table, next to it. The table kind is
/// recognized from its header row.
pub fn plot_csv(path: &Path) -> Result<Vec<PathBuf>> {
    let header = csv::Reader::from_path(path)?.headers()?.clone();
    let has = |name: &str| header.iter().any(|h| h == name);
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("chart");
    let mut written = Vec::new();
    if has("average_deviation") {
        let rows: Vec<DeviationRow> = read_rows(path)?;
        let series = regimes_in_order(rows.iter().map(|r| r.regime.as_str()))
            .into_iter()
            .map(|tag| Series {
                points: rows
                    .iter()
                    .filter(|r| r.regime == tag)
                    .map(|r| (r.step as f64, r.average_deviation))
                    .collect(),
                label: tag,
            })
            .collect::<Vec<_>>();
        let svg = line_chart("Average delay deviation", "step", "mean |allocated − requested|", &series);
        write_svg(dir.join(format!("{stem}.svg")), svg, &mut written)?;
    } else if has("share") {
        let rows: Vec<UtilizationRow> = read_rows(path)?;
        let max_delay = rows.iter().map(|r| r.delay).max().unwrap_or(0);
        for tag in regimes_in_order(rows.iter().map(|r| r.regime.as_str())) {
            let series: Vec<Series> = (0..=max_delay)
                .map(|d| Series {
                    label: format!("delay {d}"),
                    points: rows
                        .iter()
                        .filter(|r| r.regime == tag && r.delay == d)
                        .map(|r| (r.step as f64, r.share))
                        .collect(),
                })
                .collect();
            let svg = line_chart(&format!("Link utilization, {tag}"), "step", "cumulative share", &series);
            write_svg(dir.join(format!("{stem}-{tag}.svg")), svg, &mut written)?;
        }
    } else if has("metric") {
        let rows: Vec<MetricRow> = read_rows(path)?;
        let bars: Vec<(String, f64, f64)> = rows
            .iter()
            .filter(|r| r.metric == "fleet_cost")
            .map(|r| (r.regime.clone(), r.mean, 1.96 * r.stderr))
            .collect();
        let svg = bar_chart("Mean cost per loop", "cost", &bars);
        write_svg(dir.join("costs.svg"), svg, &mut written)?;
    } else {
        return Err(Error::config(format!("{} is not a deviation, utilization or metrics table", path.display())));
    }
    Ok(written)
}

/// Charts for every summary table present in `dir`.
pub fn plot_directory(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for name in ["deviation.csv", "utilization.csv", "metrics.csv"] {
        let p = dir.join(name);
        if p.exists() {
            written.extend(plot_csv(&p)?);
        }
    }
    Ok(written)
}
