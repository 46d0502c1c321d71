//! JSON experiment configuration.
//!
//! The schema is documented in `docs/config.md`; `configs/` holds one example
//! per task.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use passim_core::adjoint::{AdjointRoute, RieszKind, RieszMap};
use passim_core::forward::ForwardProblem;
use passim_core::grid::Grid;
use passim_core::model::{Admissibility, BiHelmholtzParameterization, Model};
use passim_core::param::ParamVector;
use passim_core::stochastic::{sample_ensemble, SourceCovariance};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Forward,
    AdjointTest,
    TccScan,
    Reconstruct,
    SolverTest,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Forward => "forward",
            Task::AdjointTest => "adjoint-test",
            Task::TccScan => "tcc-scan",
            Task::Reconstruct => "reconstruct",
            Task::SolverTest => "solver-test",
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown task {s:?}"))
    }
}

/// Named analytic profile evaluated at grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `base + amplitude·exp(−|x − center|² / (2 width²))`
    GaussianBump {
        center: Vec<f64>,
        width: f64,
        amplitude: f64,
        #[serde(default)]
        base: f64,
    },
    /// `base + amplitude·sin(2π wavenumber·x + phase)`
    Sinusoid {
        wavenumber: Vec<f64>,
        amplitude: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        base: f64,
    },
}

impl Profile {
    pub(crate) fn check(&self, dim: usize) -> Result<()> {
        let bad = |m: &str| Err(RunError::Config(m.into()));
        match self {
            Profile::Constant { value } if !value.is_finite() => bad("constant profile value must be finite"),
            Profile::GaussianBump { center, width, .. } => {
                if center.len() != dim {
                    return bad("gaussian-bump center must have one entry per grid axis");
                }
                if !(*width > 0.0) {
                    return bad("gaussian-bump width must be positive");
                }
                Ok(())
            }
            Profile::Sinusoid { wavenumber, .. } if wavenumber.len() != dim => {
                bad("sinusoid wavenumber must have one entry per grid axis")
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::GaussianBump { center, width, amplitude, base } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                base + amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            Profile::Sinusoid { wavenumber, amplitude, phase, base } => {
                base + amplitude * phase_of(x, wavenumber, *phase).sin()
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Profile::Constant { .. } => vec![0.0; x.len()],
            Profile::GaussianBump { center, width, .. } => {
                let g = self.value(x) - self.base();
                x.iter().zip(center).map(|(a, c)| -(a - c) / (width * width) * g).collect()
            }
            Profile::Sinusoid { wavenumber, amplitude, phase, .. } => {
                let d = amplitude * phase_of(x, wavenumber, *phase).cos();
                wavenumber.iter().map(|k| d * 2.0 * std::f64::consts::PI * k).collect()
            }
        }
    }

    fn base(&self) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::GaussianBump { base, .. } | Profile::Sinusoid { base, .. } => *base,
        }
    }

    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.n_total()).map(|i| self.value(&grid.coords(i)[..grid.dim()])).collect()
    }
}

fn phase_of(x: &[f64], k: &[f64], phase: f64) -> f64 {
    2.0 * std::f64::consts::PI * x.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() + phase
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Extent {
    Uniform(f64),
    PerAxis(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n_per_axis: usize,
    #[serde(default = "unit_extent")]
    pub extent: Extent,
}

fn unit_extent() -> Extent {
    Extent::Uniform(1.0)
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        let ext = match &self.extent {
            Extent::Uniform(e) => vec![*e],
            Extent::PerAxis(v) => v.clone(),
        };
        Grid::new(self.dim, self.n_per_axis, &ext).map_err(RunError::setup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Abc,
    BiHelmholtz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibilityConfig {
    pub a_lower: f64,
    pub b_max: Option<f64>,
    pub c_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    #[default]
    Wavenumber,
    Squared,
}

/// Per-block profiles; omitted `b` and `c` blocks default to zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub a: Option<Profile>,
    pub b: Option<Vec<Profile>>,
    pub c: Option<Profile>,
    pub k: Option<Profile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub grid: GridConfig,
    pub admissibility: Option<AdmissibilityConfig>,
    #[serde(default)]
    pub parameterization: Parameterization,
    pub params: ParamsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    White,
    Se,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    #[default]
    Ensemble,
    Pushforward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    #[serde(default = "one")]
    pub sigma: f64,
    pub ell: Option<f64>,
    #[serde(rename = "J")]
    pub j: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: SourceMode,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteConfig {
    #[default]
    Slicewise,
    Lowrank,
}

impl From<RouteConfig> for AdjointRoute {
    fn from(r: RouteConfig) -> Self {
        match r {
            RouteConfig::Slicewise => AdjointRoute::Slicewise,
            RouteConfig::Lowrank => AdjointRoute::Lowrank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RieszName {
    Identity,
    InvLaplacian,
    InvBilaplacian,
}

impl From<RieszName> for RieszKind {
    fn from(r: RieszName) -> Self {
        match r {
            RieszName::Identity => RieszKind::Identity,
            RieszName::InvLaplacian => RieszKind::InvLaplacian,
            RieszName::InvBilaplacian => RieszKind::InvBilaplacian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RieszSpec {
    Uniform(RieszName),
    PerBlock(Vec<RieszName>),
}

impl Default for RieszSpec {
    fn default() -> Self {
        RieszSpec::Uniform(RieszName::Identity)
    }
}

impl RieszSpec {
    pub fn build(&self, grid: Grid, blocks: usize) -> Result<RieszMap> {
        match self {
            RieszSpec::Uniform(k) => Ok(RieszMap::uniform(grid, blocks, (*k).into())),
            RieszSpec::PerBlock(v) if v.len() == blocks => {
                Ok(RieszMap::new(grid, v.iter().map(|k| (*k).into()).collect()))
            }
            RieszSpec::PerBlock(v) => {
                Err(RunError::Config(format!("riesz lists {} blocks, model has {blocks}", v.len())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardConfig {
    pub write_states: bool,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self { write_states: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjointTestConfig {
    pub pairs: usize,
    /// Bound on `|Re⟨F'h, y⟩ − ⟨h, F'^*y⟩| / (‖h‖‖y‖)`.
    pub tolerance: f64,
    /// Bound on the relative difference between the two extended-adjoint routes.
    pub route_tolerance: f64,
    /// Rank of the random Hermitian test data.
    pub data_rank: usize,
    pub route: RouteConfig,
    pub riesz: RieszSpec,
    /// Also run the direct two-solve baseline and record its cost.
    pub baseline: bool,
    pub seed: Option<u64>,
}

impl Default for AdjointTestConfig {
    fn default() -> Self {
        Self {
            pairs: 20,
            tolerance: 1e-8,
            route_tolerance: 1e-9,
            data_rank: 3,
            route: RouteConfig::Slicewise,
            riesz: RieszSpec::default(),
            baseline: true,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TccScanConfig {
    /// Block names receiving the perturbation direction.
    pub blocks: Vec<String>,
    /// Perturbation shape; a centred bump when omitted.
    pub direction: Option<Profile>,
    pub t_list: Option<Vec<f64>>,
    pub t_start: f64,
    pub t_end: f64,
    pub count: usize,
    pub e_lin_slope: [f64; 2],
    pub image_diff_slope: [f64; 2],
    pub cross_term_slope: [f64; 2],
    pub max_bound_ratio_spread: f64,
}

impl Default for TccScanConfig {
    fn default() -> Self {
        Self {
            blocks: vec!["c".into()],
            direction: None,
            t_list: None,
            t_start: 1e-1,
            t_end: 1e-3,
            count: 5,
            e_lin_slope: [1.9, 2.1],
            image_diff_slope: [0.9, 1.1],
            cross_term_slope: [0.9, 1.1],
            max_bound_ratio_spread: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepConfig {
    Fixed(f64),
    Named(String),
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig::Named("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructExpect {
    /// Upper bound on `‖θ_final − θ†‖ / ‖θ_0 − θ†‖`.
    pub max_error_ratio: Option<f64>,
    /// Number of leading iterations whose residual must strictly decrease.
    pub monotone_iterations: Option<usize>,
    pub stop_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub k_max: usize,
    pub tau: f64,
    pub mu: StepConfig,
    pub power_iterations: usize,
    /// Noise standard deviation relative to the RMS of the clean states.
    pub noise_level: f64,
    pub noise_seed: Option<u64>,
    pub riesz: RieszSpec,
    /// Block names to update; all blocks when omitted.
    pub active_blocks: Option<Vec<String>>,
    /// Initial guess; blocks left out start at the ground truth.
    pub initial: ParamsConfig,
    pub route: RouteConfig,
    pub baseline: bool,
    pub write_fields: bool,
    pub expect: ReconstructExpect,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            k_max: 200,
            tau: 1.5,
            mu: StepConfig::default(),
            power_iterations: 20,
            noise_level: 0.0,
            noise_seed: None,
            riesz: RieszSpec::default(),
            active_blocks: None,
            initial: ParamsConfig::default(),
            route: RouteConfig::Slicewise,
            baseline: true,
            write_fields: true,
            expect: ReconstructExpect::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverTestConfig {
    /// Resolutions, coarse to fine; consecutive pairs are compared.
    pub n_list: Vec<usize>,
    /// Accepted range of the consecutive L² error ratios.
    pub ratio_range: [f64; 2],
}

impl Default for SolverTestConfig {
    fn default() -> Self {
        Self { n_list: vec![16, 32], ratio_range: [3.5, 4.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Option<Task>,
    pub model: ModelConfig,
    pub source: SourceConfig,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub forward: ForwardConfig,
    #[serde(default)]
    pub adjoint_test: AdjointTestConfig,
    #[serde(default)]
    pub tcc_scan: TccScanConfig,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
    #[serde(default)]
    pub solver_test: SolverTestConfig,
}

/// Everything a task needs, built from a validated config.
pub struct Setup {
    pub grid: Grid,
    pub model: Model,
    pub truth: ParamVector,
    pub problem: ForwardProblem,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Ok((Self::from_json(text)?, bytes))
    }

    pub fn build_model(&self) -> Result<Model> {
        let grid = self.model.grid.build()?;
        match self.model.kind {
            ModelKind::Abc => {
                let adm = self
                    .model
                    .admissibility
                    .ok_or_else(|| RunError::Config("abc model needs an admissibility block".into()))?;
                if !(adm.a_lower > 0.0) {
                    return Err(RunError::Config("a_lower must be positive".into()));
                }
                let mut a = Admissibility::with_defaults(adm.a_lower, &grid);
                if let Some(b) = adm.b_max {
                    a.b_max = b;
                }
                if let Some(c) = adm.c_max {
                    a.c_max = c;
                }
                Ok(Model::abc(grid, a))
            }
            ModelKind::BiHelmholtz => {
                let p = match self.model.parameterization {
                    Parameterization::Wavenumber => BiHelmholtzParameterization::Wavenumber,
                    Parameterization::Squared => BiHelmholtzParameterization::Squared,
                };
                Ok(Model::bihelmholtz(grid, p))
            }
        }
    }

    /// Index list for block names: `a`, `b` (all drift components), `b0`…,
    /// `c` for the abc model and `k` for bi-Helmholtz.
    pub fn block_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        let dim = self.model.grid.dim;
        let mut out = Vec::new();
        for name in names {
            let idx: Vec<usize> = match (self.model.kind, name.as_str()) {
                (ModelKind::Abc, "a") => vec![0],
                (ModelKind::Abc, "b") => (1..=dim).collect(),
                (ModelKind::Abc, "c") => vec![dim + 1],
                (ModelKind::Abc, s) if s.starts_with('b') => match s[1..].parse::<usize>() {
                    Ok(k) if k < dim => vec![1 + k],
                    _ => return Err(RunError::Config(format!("unknown block {s:?}"))),
                },
                (ModelKind::BiHelmholtz, "k") => vec![0],
                (_, s) => return Err(RunError::Config(format!("unknown block {s:?} for this model"))),
            };
            for i in idx {
                if !out.contains(&i) {
                    out.push(i);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Parameter vector from profiles, with omitted blocks taken from `fallback`.
    pub fn params_vector(&self, model: &Model, params: &ParamsConfig, fallback: Option<&ParamVector>) -> Result<ParamVector> {
        let grid = *model.grid();
        let dim = grid.dim();
        let mut theta = fallback.cloned().unwrap_or_else(|| model.zeros());
        let mut set = |block: usize, p: &Profile| -> Result<()> {
            p.check(dim)?;
            theta.block_mut(block).copy_from_slice(&p.sample(&grid));
            Ok(())
        };
        match self.model.kind {
            ModelKind::Abc => {
                if params.k.is_some() {
                    return Err(RunError::Config("abc model takes a, b, c profiles, not k".into()));
                }
                match (&params.a, fallback) {
                    (Some(a), _) => set(0, a)?,
                    (None, None) => return Err(RunError::Config("abc model needs an a profile".into())),
                    (None, Some(_)) => {}
                }
                if let Some(b) = &params.b {
                    if b.len() != dim {
                        return Err(RunError::Config(format!("b needs {dim} profiles, got {}", b.len())));
                    }
                    for (k, p) in b.iter().enumerate() {
                        set(1 + k, p)?;
                    }
                }
                if let Some(c) = &params.c {
                    set(dim + 1, c)?;
                }
            }
            ModelKind::BiHelmholtz => {
                if params.a.is_some() || params.b.is_some() || params.c.is_some() {
                    return Err(RunError::Config("bi-helmholtz model takes a k profile only".into()));
                }
                match (&params.k, fallback) {
                    (Some(k), _) => set(0, k)?,
                    (None, None) => return Err(RunError::Config("bi-helmholtz model needs a k profile".into())),
                    (None, Some(_)) => {}
                }
            }
        }
        Ok(theta)
    }

    pub fn source_covariance(&self, grid: Grid) -> Result<SourceCovariance> {
        let s = &self.source;
        if !(s.sigma > 0.0) {
            return Err(RunError::Config("source sigma must be positive".into()));
        }
        match s.kind {
            SourceKind::White => SourceCovariance::white(grid, s.sigma),
            SourceKind::Se => {
                let ell = s.ell.ok_or_else(|| RunError::Config("se source needs ell".into()))?;
                SourceCovariance::squared_exponential(grid, s.sigma, ell)
            }
        }
        .map_err(RunError::setup)
    }

    /// Builds the model, ground truth and forward problem, checking
    /// admissibility of the truth.
    pub fn setup(&self, source_seed: u64) -> Result<Setup> {
        let model = self.build_model()?;
        let grid = *model.grid();
        let truth = self.params_vector(&model, &self.model.params, None)?;
        model.check_admissible(&truth).map_err(RunError::setup)?;
        let cov = self.source_covariance(grid)?;
        let problem = match self.source.mode {
            SourceMode::Ensemble => {
                if self.source.j == 0 {
                    return Err(RunError::Config("J must be at least 1".into()));
                }
                let ens = sample_ensemble(&cov, self.source.j, source_seed).map_err(RunError::setup)?;
                ForwardProblem::ensemble(model.clone(), cov, ens)
            }
            SourceMode::Pushforward => ForwardProblem::pushforward(model.clone(), cov),
        }
        .map_err(RunError::setup)?;
        Ok(Setup { grid, model, truth, problem })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "model": {
            "kind": "abc",
            "grid": {"dim": 2, "n_per_axis": 8},
            "admissibility": {"a_lower": 0.5},
            "params": {
                "a": {"kind": "gaussian-bump", "center": [0.5, 0.5], "width": 0.2, "amplitude": 0.5, "base": 1.0},
                "c": {"kind": "sinusoid", "wavenumber": [1.0, 0.0], "amplitude": 0.2}
            }
        },
        "source": {"kind": "white", "J": 4, "seed": 3}
    }"#;

    #[test]
    fn parses_defaults_and_builds() {
        let cfg = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(cfg.adjoint_test.pairs, 20);
        assert_eq!(cfg.reconstruct.k_max, 200);
        let s = cfg.setup(cfg.source.seed).unwrap();
        assert_eq!(s.truth.n_blocks(), 4);
        assert!(s.truth.block(1).iter().all(|v| *v == 0.0));
        let peak = s.truth.block(0).iter().copied().fold(0.0, f64::max);
        assert!(peak > 1.4 && peak <= 1.5);
        assert_eq!(cfg.block_indices(&["c".into(), "b".into(), "a".into()]).unwrap(), vec![0, 1, 2, 3]);
        assert!(cfg.block_indices(&["k".into()]).is_err());
        assert!(cfg.block_indices(&["b2".into()]).is_err());
    }

    #[test]
    fn rejects_unknown_fields_and_inadmissible_truth() {
        let bad = BASE.replace("\"seed\": 3", "\"seed\": 3, \"colour\": 1");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(RunError::Config(_))));
        let low = BASE.replace("\"base\": 1.0", "\"base\": 0.1");
        let cfg = ExperimentConfig::from_json(&low).unwrap();
        assert!(matches!(cfg.setup(0), Err(RunError::Admissibility(_))));
        let small = BASE.replace("\"n_per_axis\": 8", "\"n_per_axis\": 2");
        let cfg = ExperimentConfig::from_json(&small).unwrap();
        assert!(matches!(cfg.setup(0), Err(RunError::Config(_))));
    }

    #[test]
    fn profile_gradients_match_finite_differences() {
        let profiles = [
            Profile::GaussianBump { center: vec![0.3, 0.6], width: 0.2, amplitude: 0.7, base: 1.0 },
            Profile::Sinusoid { wavenumber: vec![1.0, 2.0], amplitude: 0.5, phase: 0.3, base: 0.0 },
            Profile::Constant { value: 2.0 },
        ];
        let x = [0.41, 0.37];
        let eps = 1e-6;
        for p in &profiles {
            let g = p.gradient(&x);
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += eps;
                xm[k] -= eps;
                let fd = (p.value(&xp) - p.value(&xm)) / (2.0 * eps);
                assert!((fd - g[k]).abs() < 1e-7, "{p:?} axis {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn tasks_round_trip_as_strings() {
        for t in [Task::Forward, Task::AdjointTest, Task::TccScan, Task::Reconstruct, Task::SolverTest] {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
        }
    }
}
