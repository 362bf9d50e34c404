use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn ncsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncsim")).args(args).output().expect("ncsim starts")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// The desk config with its output directory moved into `dir`.
fn desk_in(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let text = std::fs::read_to_string(bundled("desk.json")).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    cfg["replications"] = json!(3);
    cfg["outputs"] = json!({ "dir": dir.join("out"), "emitSvg": false });
    edit(&mut cfg);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_tables_and_succeeds() {
    let dir = TempDir::new().unwrap();
    let cfg = desk_in(dir.path(), |c| c["regimes"] = json!(["aware-impassive", "delay-insensitive"]));
    let out = ncsim(&["run", arg(&cfg)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("aware-impassive") && text.contains("delay-insensitive"));
    assert!(!text.contains("agnostic"));
    for table in ["trace.csv", "metrics.csv", "utilization.csv", "deviation.csv"] {
        assert!(dir.path().join("out").join(table).is_file(), "{table}");
    }
}

#[test]
fn command_line_overrides_take_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = desk_in(dir.path(), |_| {});
    let elsewhere = dir.path().join("elsewhere");
    let out = ncsim(&[
        "run",
        arg(&cfg),
        "--out",
        arg(&elsewhere),
        "--replications",
        "2",
        "--regimes",
        "agnostic-reactive",
        "--svg",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elsewhere.join("metrics.csv").is_file());
    assert!(!dir.path().join("out").exists());
    let svgs = std::fs::read_dir(&elsewhere)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert!(svgs > 0);
    let metrics = std::fs::read_to_string(elsewhere.join("metrics.csv")).unwrap();
    assert!(metrics.lines().skip(1).all(|l| l.starts_with("shadow") || l.starts_with("agnostic-reactive")));
}

#[test]
fn infeasible_allocation_exits_with_2() {
    let dir = TempDir::new().unwrap();
    let cfg = desk_in(dir.path(), |c| {
        c["horizon"] = json!(3);
        c["regimes"] = json!(["aware-impassive"]);
        c["network"] = json!({ "maxDelay": 1, "prices": [2, 1], "capacities": [1, 1] });
        c["subsystems"] = json!([{ "a": [[1.2]], "b": [[1.0]], "sigmaW": [[1.0]], "alpha": 0, "beta": 0, "repeat": 2 }]);
    });
    let out = ncsim(&["run", arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));
}

#[test]
fn configuration_errors_exit_with_3() {
    let dir = TempDir::new().unwrap();
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ \"horizon\": 3, ").unwrap();
    assert_eq!(ncsim(&["run", arg(&broken)]).status.code(), Some(3));

    let unknown = desk_in(dir.path(), |c| c["colour"] = json!("blue"));
    assert_eq!(ncsim(&["run", arg(&unknown)]).status.code(), Some(3));

    let short = desk_in(dir.path(), |c| c["network"]["prices"] = json!([20, 15]));
    assert_eq!(ncsim(&["run", arg(&short)]).status.code(), Some(3));
    assert_eq!(ncsim(&["feasibility", arg(&short)]).status.code(), Some(3));
}

#[test]
fn a_gap_above_tolerance_exits_with_4() {
    let dir = TempDir::new().unwrap();
    // A threshold of one variable sends every allocation through the
    // bounded heuristic path, and a zero tolerance rejects any gap left.
    let cfg = desk_in(dir.path(), |c| {
        c["regimes"] = json!(["aware-impassive"]);
        c["solver"] = json!({ "exactThreshold": 1, "gapTolerance": 0 });
    });
    let out = ncsim(&["run", arg(&cfg)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds the tolerance"));
    assert!(dir.path().join("out").join("metrics.csv").is_file());
}

#[test]
fn feasibility_prints_the_capacity_bounds() {
    let out = ncsim(&["feasibility", arg(&bundled("large.json"))]);
    assert_eq!(out.status.code(), Some(0));
    let bounds: Vec<(usize, usize)> = stdout(&out)
        .lines()
        .filter_map(|l| {
            let cols: Vec<&str> = l.split_whitespace().collect();
            Some((cols.first()?.parse().ok()?, cols.get(2)?.parse().ok()?))
        })
        .collect();
    assert_eq!(bounds, vec![(0, 10), (1, 6), (2, 6), (3, 6), (4, 6), (5, 10)]);
}

#[test]
fn verify_reports_three_passing_suites() {
    let out = ncsim(&["verify", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn plot_draws_charts_from_tables() {
    let dir = TempDir::new().unwrap();
    let cfg = desk_in(dir.path(), |c| c["regimes"] = json!(["aware-reactive"]));
    assert_eq!(ncsim(&["run", arg(&cfg)]).status.code(), Some(0));
    let tables = [dir.path().join("out/utilization.csv"), dir.path().join("out/deviation.csv")];
    let out = ncsim(&["plot", arg(&tables[0]), arg(&tables[1])]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let written: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
    assert!(!written.is_empty());
    for svg in &written {
        assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"), "{svg}");
    }
    assert_ne!(ncsim(&["plot", arg(&dir.path().join("missing.csv"))]).status.code(), Some(0));
}
