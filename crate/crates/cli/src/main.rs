use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ncsim_core::resource_manager::{feasibility_bound, AllocationRegime};
use ncsim_core::sim::{plot_csv, run_experiment, write_outputs, ExperimentConfig};
use ncsim_core::verify::enumeration_suites;
use ncsim_core::Error;

#[derive(Parser)]
#[command(name = "ncsim", version, about = "Networked control co-design simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every regime in a config and write the result tables.
    Run {
        config: PathBuf,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated regime tags, overriding the config.
        #[arg(long, value_delimiter = ',')]
        regimes: Option<Vec<AllocationRegime>>,
        /// Also draw SVG charts.
        #[arg(long)]
        svg: bool,
    },
    /// Print the per-link capacity that guarantees a feasible allocation.
    Feasibility { config: PathBuf },
    /// Check the MILP solver against brute-force enumeration.
    Verify {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Draw SVG charts from output tables.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_GAP: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::AllocationInfeasible { .. } => EXIT_INFEASIBLE,
        Error::Config(_) | Error::Dimension { .. } | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::load(path)
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    replications: Option<usize>,
    seed: Option<u64>,
    regimes: Option<Vec<AllocationRegime>>,
    svg: bool,
) -> Result<u8, Error> {
    let mut cfg = load(&config)?;
    if let Some(dir) = out {
        cfg.outputs.dir = dir;
    }
    if let Some(r) = replications {
        cfg.replications = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = regimes {
        cfg.regimes = r;
    }
    cfg.outputs.emit_svg |= svg;
    let result = run_experiment(&cfg)?;
    let files = write_outputs(&result, &cfg)?;

    println!(
        "{:<20} {:>14} {:>10} {:>12} {:>10} {:>10}",
        "regime", "mean cost", "stderr", "social cost", "dev(T-1)", "max gap"
    );
    println!(
        "{:<20} {:>14.4} {:>10.4} {:>12} {:>10} {:>10.2e}",
        "shadow",
        result.shadow_cost.mean,
        result.shadow_cost.stderr,
        "-",
        "-",
        result.shadow.max_gap()
    );
    for r in &result.regimes {
        println!(
            "{:<20} {:>14.4} {:>10.4} {:>12.4} {:>10.4} {:>10.2e}",
            r.regime.tag(),
            r.fleet_cost.mean,
            r.fleet_cost.stderr,
            r.social_cost.mean,
            r.deviation.last().copied().unwrap_or(0.0),
            r.schedule.max_gap()
        );
    }
    println!("wrote {} files to {}", files.len(), cfg.outputs.dir.display());

    let gap = result.max_gap();
    if gap > cfg.solver.gap_tolerance {
        eprintln!(
            "warning: largest optimality gap {gap:.3e} exceeds the tolerance {:.3e}",
            cfg.solver.gap_tolerance
        );
        return Ok(EXIT_GAP);
    }
    Ok(0)
}

fn feasibility(config: PathBuf) -> Result<u8, Error> {
    let cfg = load(&config)?;
    let n = cfg.num_loops();
    let tol = cfg.tolerances();
    let net = &cfg.network;
    println!("{:>5} {:>10} {:>10}  status", "delay", "capacity", "bound");
    for d in 0..=net.max_delay {
        let bound = feasibility_bound(d, &tol, n, net.max_delay);
        let cap = net.capacities[d];
        let status = if cap >= bound { "meets bound" } else { "below bound" };
        println!("{d:>5} {cap:>10} {bound:>10}  {status}");
    }
    println!(
        "total capacity {} for {n} loops",
        net.capacities.iter().sum::<usize>()
    );
    Ok(0)
}

fn verify(seed: u64) -> Result<u8, Error> {
    let mut all_ok = true;
    for s in enumeration_suites(seed)? {
        let mark = if s.ok() { "PASS" } else { "FAIL" };
        println!("{mark} {}: {}/{} agree with enumeration", s.name, s.passed, s.cases);
        if !s.failures.is_empty() {
            println!("     disagreeing cases: {:?}", s.failures);
        }
        all_ok &= s.ok();
    }
    Ok(if all_ok { 0 } else { EXIT_FAILURE })
}

fn plot(paths: Vec<PathBuf>) -> Result<u8, Error> {
    for p in paths {
        for svg in plot_csv(&p)? {
            println!("{}", svg.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            out,
            replications,
            seed,
            regimes,
            svg,
        } => run(config, out, replications, seed, regimes, svg),
        Command::Feasibility { config } => feasibility(config),
        Command::Verify { seed } => verify(seed),
        Command::Plot { csv } => plot(csv),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
