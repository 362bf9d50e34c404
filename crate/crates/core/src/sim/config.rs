//! JSON experiment description.

use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{NetworkModel, PlantModel};
use crate::milp::SolverOptions;
use crate::resource_manager::{validate_weights, AllocationRegime};

/// How a reactive plan treats allocations that have not happened yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FutureClosure {
    /// Assume future requests will be granted as asked.
    #[default]
    Optimistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SubsystemConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q1: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q2: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    pub sigma_w: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_x0: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_x0: Option<Vec<f64>>,
    pub alpha: usize,
    pub beta: usize,
    #[serde(default = "one")]
    pub repeat: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_time_limit")]
    pub time_limit_seconds: f64,
    #[serde(default = "default_threshold")]
    pub exact_threshold: usize,
    /// Relative gap above which a time-limited run counts as a failure.
    #[serde(default = "default_gap_tolerance")]
    pub gap_tolerance: f64,
    /// Write every allocation program here in LP format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump_dir: Option<PathBuf>,
}

fn default_time_limit() -> f64 {
    60.0
}
fn default_threshold() -> usize {
    600
}
fn default_gap_tolerance() -> f64 {
    1e-3
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            time_limit_seconds: default_time_limit(),
            exact_threshold: default_threshold(),
            gap_tolerance: default_gap_tolerance(),
            dump_dir: None,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            exact_threshold: self.exact_threshold,
            default_time_limit: Duration::from_secs_f64(self.time_limit_seconds),
            record_nodes: false,
            dump_dir: self.dump_dir.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub emit_svg: bool,
    /// Replications written to trace.csv; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_replications: Option<usize>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            emit_svg: false,
            trace_replications: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub regimes: Vec<AllocationRegime>,
    pub network: NetworkModel,
    pub subsystems: Vec<SubsystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub future_closure: FutureClosure,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl SubsystemConfig {
    pub fn to_model(&self, index: usize) -> Result<PlantModel> {
        let a = matrix(&self.a, "A")?;
        let b = matrix(&self.b, "B")?;
        let sigma_w = matrix(&self.sigma_w, "sigmaW")?;
        let mut m = PlantModel::new(a, b, sigma_w).with_tolerances(self.alpha, self.beta).with_index(index);
        if let Some(q1) = &self.q1 {
            m.q1 = matrix(q1, "q1")?;
        }
        if let Some(q2) = &self.q2 {
            m.q2 = matrix(q2, "q2")?;
        }
        if let Some(r) = &self.r {
            m.r = matrix(r, "r")?;
        }
        if let Some(s) = &self.sigma_x0 {
            m.sigma_x0 = matrix(s, "sigmaX0")?;
        }
        if let Some(mu) = &self.mean_x0 {
            m.mean_x0 = DVector::from_column_slice(mu);
        }
        Ok(m)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative output directory is resolved against
    /// the file's own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if cfg.outputs.dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.outputs.dir = parent.join(&cfg.outputs.dir);
            }
        }
        Ok(cfg)
    }

    /// One model per loop, with `repeat` expanded.
    pub fn models(&self) -> Result<Vec<PlantModel>> {
        let mut out = Vec::new();
        for s in &self.subsystems {
            for _ in 0..s.repeat {
                let m = s.to_model(out.len())?;
                m.validate(Some(self.network.max_delay))?;
                out.push(m);
            }
        }
        Ok(out)
    }

    pub fn num_loops(&self) -> usize {
        self.subsystems.iter().map(|s| s.repeat).sum()
    }

    pub fn weights_or_uniform(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.num_loops() as f64; self.num_loops()])
    }

    pub fn tolerances(&self) -> Vec<(usize, usize)> {
        self.subsystems
            .iter()
            .flat_map(|s| std::iter::repeat_n((s.alpha, s.beta), s.repeat))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        if self.regimes.is_empty() {
            return Err(Error::config("at least one regime is required"));
        }
        if self.subsystems.is_empty() || self.subsystems.iter().any(|s| s.repeat == 0) {
            return Err(Error::config("subsystems must be non-empty with repeat ≥ 1"));
        }
        let n = self.num_loops();
        self.network.validate(Some(n))?;
        if let Some(w) = &self.weights {
            validate_weights(w, n)?;
        }
        if !(self.solver.time_limit_seconds > 0.0) || !(self.solver.gap_tolerance >= 0.0) {
            return Err(Error::config("solver limits must be positive"));
        }
        self.models()?;
        Ok(())
    }
}
