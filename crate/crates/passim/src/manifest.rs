use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub source: u64,
    pub task: Option<u64>,
    pub noise: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub dim: usize,
    pub n_per_axis: usize,
    pub extent: Vec<f64>,
    pub n_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub method: String,
    pub lower_bandwidth: usize,
    pub upper_bandwidth: usize,
    pub threads: usize,
}

/// Solve counts of one backpropagation by the extended-adjoint route and by
/// the direct two-adjoint baseline, at the same θ and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCounts {
    pub route: String,
    pub n_total: usize,
    pub extended_adjoint: u64,
    pub direct: u64,
    pub data_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveCounts {
    pub total: u64,
    pub baseline: Option<BaselineCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub task: String,
    pub config_sha256: String,
    pub model: String,
    pub seeds: Seeds,
    pub grid: GridInfo,
    pub solver: SolverInfo,
    pub solves: SolveCounts,
    pub wall_time_seconds: f64,
    pub assertions: Vec<Assertion>,
    pub outputs: Vec<String>,
    pub passed: bool,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| RunError::Format { path: path.into(), msg: e.to_string() })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| RunError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveCountSummary {
    pub route: String,
    pub n_total: usize,
    pub extended_adjoint: u64,
    pub direct: u64,
    pub ratio: f64,
    pub total: u64,
}

impl fmt::Display for SolveCountSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "route:                {}", self.route)?;
        writeln!(f, "n_total:              {}", self.n_total)?;
        writeln!(f, "extended-adjoint:     {} solves per backpropagation", self.extended_adjoint)?;
        writeln!(f, "direct baseline:      {} solves per backpropagation", self.direct)?;
        writeln!(f, "ratio:                {}", self.ratio)?;
        write!(f, "total solves in run:  {}", self.total)
    }
}

/// Extended-adjoint versus direct-baseline solve counts of a run.
pub fn solve_count_report(manifest: &Manifest) -> Result<SolveCountSummary> {
    let b = manifest
        .solves
        .baseline
        .as_ref()
        .ok_or_else(|| RunError::Config("manifest has no baseline solve counts".into()))?;
    if b.direct == 0 {
        return Err(RunError::Config("baseline recorded zero direct solves".into()));
    }
    if b.extended_adjoint + b.direct > manifest.solves.total {
        return Err(RunError::Numerical(format!(
            "baseline counts {} + {} exceed the run total {}",
            b.extended_adjoint, b.direct, manifest.solves.total
        )));
    }
    Ok(SolveCountSummary {
        route: b.route.clone(),
        n_total: b.n_total,
        extended_adjoint: b.extended_adjoint,
        direct: b.direct,
        ratio: b.extended_adjoint as f64 / b.direct as f64,
        total: manifest.solves.total,
    })
}
