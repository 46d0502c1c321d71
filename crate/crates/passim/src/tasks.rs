//! Task drivers behind the CLI subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use passim_core::adjoint::{
    backprop, backprop_direct, extended_adjoint_lowrank, extended_adjoint_slicewise, AdjointRoute, RieszMap,
};
use passim_core::derivative::{backprop_at, geometric_steps, jacobian_apply, tcc_scan};
use passim_core::exec::Executor;
use passim_core::forward::{ForwardMode, ForwardProblem};
use passim_core::grid::{Field, Grid};
use passim_core::model::Model;
use passim_core::param::ParamVector;
use passim_core::reconstruct::{landweber, make_noisy_data, LandweberConfig, StepSize};
use passim_core::stochastic::{complex_normal, hermitian_factors, sample_covariance, sample_rng, CovKernel, HERMITIAN_TOL};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ModelKind, Profile, Setup, StepConfig, Task};
use crate::error::{Result, RunError};
use crate::exec::RayonExecutor;
use crate::io::{write_field, write_kernel};
use crate::manifest::{Assertion, BaselineCounts, GridInfo, Manifest, Seeds, SolveCounts, SolverInfo};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output_dir` from the config.
    pub output: Option<PathBuf>,
    /// Worker threads; 0 picks the machine default.
    pub threads: usize,
    /// Overrides the source seed from the config.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub output_dir: PathBuf,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.manifest.passed
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

/// Collects assertions, output files and solve counts while a task runs.
struct Recorder {
    dir: PathBuf,
    outputs: Vec<String>,
    assertions: Vec<Assertion>,
    baseline: Option<BaselineCounts>,
    extra_solves: u64,
    task_seed: Option<u64>,
    noise_seed: Option<u64>,
}

impl Recorder {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn field(&mut self, stem: &str, field: &Field) -> Result<()> {
        let bin = self.path(&format!("{stem}.bin"));
        self.outputs.push(format!("{stem}.json"));
        write_field(&bin, field)
    }

    fn kernel(&mut self, stem: &str, kernel: &CovKernel) -> Result<()> {
        let bin = self.path(&format!("{stem}.bin"));
        self.outputs.push(format!("{stem}.json"));
        write_kernel(&bin, kernel)
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(name);
        let err = |e: csv::Error| RunError::Format { path: path.clone(), msg: e.to_string() };
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(&path).map_err(err)?;
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush().map_err(|e| RunError::io(&path, e))
    }

    fn at_most(&mut self, name: &str, value: f64, bound: f64) {
        self.assertions.push(Assertion {
            name: name.into(),
            value,
            bound: format!("<= {bound:e}"),
            passed: value <= bound,
        });
    }

    fn within(&mut self, name: &str, value: f64, range: [f64; 2]) {
        self.assertions.push(Assertion {
            name: name.into(),
            value,
            bound: format!("in [{}, {}]", range[0], range[1]),
            passed: value >= range[0] && value <= range[1],
        });
    }

    fn check(&mut self, name: &str, value: f64, bound: &str, passed: bool) {
        self.assertions.push(Assertion { name: name.into(), value, bound: bound.into(), passed });
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn route_name(r: AdjointRoute) -> &'static str {
    match r {
        AdjointRoute::Slicewise => "slicewise",
        AdjointRoute::Lowrank => "lowrank",
    }
}

fn block_names(model: &Model) -> Vec<String> {
    match model {
        Model::Abc(_) => {
            let dim = model.grid().dim();
            let mut v = vec!["a".to_string()];
            v.extend((0..dim).map(|k| format!("b{k}")));
            v.push("c".into());
            v
        }
        Model::BiHelmholtz(_) => vec!["k".into()],
    }
}

fn random_field(grid: Grid, seed: u64, stream: u64) -> Field {
    Field::new(grid, complex_normal(&mut sample_rng(seed, stream), grid.n_total())).expect("length matches grid")
}

fn random_direction(model: &Model, seed: u64, stream: u64) -> ParamVector {
    let mut h = model.zeros();
    let z = complex_normal(&mut sample_rng(seed, stream), h.data().len());
    for (v, c) in h.data_mut().iter_mut().zip(z) {
        *v = c.re;
    }
    h
}

/// Loads a config file and runs `task` on it.
pub fn run(task: Task, config_path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let (cfg, bytes) = ExperimentConfig::load(config_path)?;
    run_config(task, &cfg, &bytes, opts)
}

/// Runs `task`; `raw` is the config text that gets hashed into the manifest.
pub fn run_config(task: Task, cfg: &ExperimentConfig, raw: &[u8], opts: &RunOptions) -> Result<RunOutcome> {
    if let Some(t) = cfg.task {
        if t != task {
            return Err(RunError::Config(format!("config is for task {}, not {}", t.as_str(), task.as_str())));
        }
    }
    let dir = opts
        .output
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| RunError::Config("no output directory (set output_dir or pass --output)".into()))?;
    let start = Instant::now();
    let source_seed = opts.seed.unwrap_or(cfg.source.seed);
    let setup = cfg.setup(source_seed)?;
    let exec = Arc::new(
        RayonExecutor::new(opts.threads).map_err(|e| RunError::Config(format!("thread pool: {e}")))?,
    );
    let threads = exec.threads();
    let Setup { grid, model, truth, problem } = setup;
    let problem = problem.with_executor(exec.clone());
    let bands = model.assemble(&truth)?;
    fs::create_dir_all(&dir).map_err(|e| RunError::io(&dir, e))?;

    let mut rec = Recorder {
        dir: dir.clone(),
        outputs: Vec::new(),
        assertions: Vec::new(),
        baseline: None,
        extra_solves: 0,
        task_seed: None,
        noise_seed: None,
    };
    match task {
        Task::Forward => forward(cfg, &problem, &truth, &mut rec)?,
        Task::AdjointTest => adjoint_test(cfg, &problem, &truth, source_seed, &mut rec)?,
        Task::TccScan => tcc(cfg, &problem, &truth, &mut rec)?,
        Task::Reconstruct => reconstruct(cfg, &problem, &truth, source_seed, &mut rec)?,
        Task::SolverTest => solver_test(cfg, &mut rec)?,
    }

    rec.outputs.sort();
    let passed = rec.assertions.iter().all(|a| a.passed);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        task: task.as_str().into(),
        config_sha256: hex::encode(Sha256::digest(raw)),
        model: match cfg.model.kind {
            ModelKind::Abc => "abc".into(),
            ModelKind::BiHelmholtz => "bi-helmholtz".into(),
        },
        seeds: Seeds { source: source_seed, task: rec.task_seed, noise: rec.noise_seed },
        grid: GridInfo {
            dim: grid.dim(),
            n_per_axis: grid.n_per_axis(),
            extent: grid.extents().to_vec(),
            n_total: grid.n_total(),
        },
        solver: SolverInfo {
            method: "banded LU with partial pivoting".into(),
            lower_bandwidth: bands.matrix().lower(),
            upper_bandwidth: bands.matrix().upper(),
            threads,
        },
        solves: SolveCounts { total: problem.total_solves() + rec.extra_solves, baseline: rec.baseline.clone() },
        wall_time_seconds: start.elapsed().as_secs_f64(),
        assertions: rec.assertions,
        outputs: rec.outputs,
        passed,
    };
    manifest.write(&dir.join("manifest.json"))?;
    for a in manifest.assertions.iter().filter(|a| !a.passed) {
        log::warn!("assertion {} failed: {} not {}", a.name, a.value, a.bound);
    }
    Ok(RunOutcome { manifest, output_dir: dir })
}

fn forward(cfg: &ExperimentConfig, problem: &ForwardProblem, truth: &ParamVector, rec: &mut Recorder) -> Result<()> {
    let eval = problem.evaluate(truth)?;
    if let (Some(states), true) = (&eval.states, cfg.forward.write_states) {
        for (j, s) in states.iter().enumerate() {
            rec.field(&format!("state_{j:03}"), s)?;
        }
    }
    let k = &eval.cov;
    rec.kernel("kernel", k)?;
    let eig = k.eigenvalues();
    let min_eig = eig.first().copied().unwrap_or(0.0);
    let max_eig = eig.last().copied().unwrap_or(0.0);
    let j = problem.sources().map_or(0, |s| s.len());
    let mode = match problem.mode() {
        ForwardMode::Ensemble => "ensemble",
        ForwardMode::Pushforward => "pushforward",
    };
    let rows = vec![
        vec!["mode".into(), mode.into()],
        vec!["n_total".into(), k.grid().n_total().to_string()],
        vec!["J".into(), j.to_string()],
        vec!["kernel_norm".into(), num(k.norm())],
        vec!["trace".into(), num(k.trace().re)],
        vec!["hermitian_defect".into(), num(k.hermitian_defect())],
        vec!["min_eigenvalue".into(), num(min_eig)],
        vec!["max_eigenvalue".into(), num(max_eig)],
        vec!["solves".into(), problem.total_solves().to_string()],
    ];
    rec.csv("forward_metrics.csv", &["metric", "value"], &rows)?;
    rec.at_most("hermitian_defect", k.hermitian_defect(), HERMITIAN_TOL);
    rec.check("numerically_psd", min_eig, "covariance check", k.is_covariance());
    Ok(())
}

/// Extended-adjoint versus direct-baseline solve counts for one
/// backpropagation of `y` at the evaluation point.
fn baseline_counts(
    problem: &ForwardProblem,
    eval: &passim_core::forward::Evaluation,
    y: &CovKernel,
    riesz: &RieszMap,
    route: AdjointRoute,
    rec: &mut Recorder,
) -> Result<()> {
    let adj = eval.adjoint_operator();
    let n = problem.grid().n_total();
    let (psi, rank) = match route {
        AdjointRoute::Slicewise => (extended_adjoint_slicewise(&adj, y, problem.executor())?, None),
        AdjointRoute::Lowrank => {
            let f = hermitian_factors(y)?;
            let r = f.len();
            (extended_adjoint_lowrank(&adj, &f, problem.executor())?, Some(r))
        }
    };
    let g = backprop(problem.model(), &eval.theta, &eval.cov, &psi, riesz, problem.executor())?;
    let (g_direct, direct) =
        backprop_direct(problem.model(), &eval.theta, &adj, &eval.cov, y, riesz, problem.executor())?;
    let diff = g.plus(-1.0, &g_direct)?.norm() / g.norm().max(f64::MIN_POSITIVE);
    rec.at_most("baseline_gradient_agreement", diff, 1e-9);
    let expected = match rank {
        None => 0.5,
        Some(r) => r as f64 / (2.0 * n as f64),
    };
    let ratio = psi.solves_used as f64 / direct as f64;
    rec.check("solve_ratio", ratio, &format!("== {expected}"), ratio == expected && direct == 2 * n as u64);
    rec.baseline = Some(BaselineCounts {
        route: route_name(route).into(),
        n_total: n,
        extended_adjoint: psi.solves_used,
        direct,
        data_rank: rank,
    });
    Ok(())
}

fn adjoint_test(
    cfg: &ExperimentConfig,
    problem: &ForwardProblem,
    truth: &ParamVector,
    source_seed: u64,
    rec: &mut Recorder,
) -> Result<()> {
    let at = &cfg.adjoint_test;
    if at.pairs == 0 || at.data_rank == 0 {
        return Err(RunError::Config("adjoint_test needs pairs >= 1 and data_rank >= 1".into()));
    }
    let seed = at.seed.unwrap_or(source_seed.wrapping_add(1));
    rec.task_seed = Some(seed);
    let grid = *problem.grid();
    let model = problem.model();
    let riesz = at.riesz.build(grid, model.n_blocks())?;
    let route: AdjointRoute = at.route.into();
    let eval = problem.evaluate(truth)?;
    let data = |k: usize| -> Result<CovKernel> {
        let fields: Vec<Field> =
            (0..at.data_rank).map(|r| random_field(grid, seed, (k * at.data_rank + r) as u64)).collect();
        Ok(sample_covariance(&fields)?)
    };

    let mut rows = Vec::with_capacity(at.pairs);
    let mut worst: f64 = 0.0;
    for k in 0..at.pairs {
        let h = random_direction(model, seed, (1 << 32) + k as u64);
        let y = data(k)?;
        let lhs = jacobian_apply(problem, &eval, &h)?.inner_product(&y)?.re;
        let (g, _) = backprop_at(problem, &eval, &y, &riesz, route)?;
        let rhs = riesz.inner_product(&h, &g)?;
        let rel = (lhs - rhs).abs() / (h.norm() * y.norm());
        worst = worst.max(rel);
        rows.push(vec![k.to_string(), num(lhs), num(rhs), num(rel)]);
    }
    rec.csv("adjoint_test.csv", &["pair", "lhs", "rhs", "rel_error"], &rows)?;
    rec.at_most("adjoint_identity_max_rel_error", worst, at.tolerance);

    let y = data(0)?;
    let adj = eval.adjoint_operator();
    let s = extended_adjoint_slicewise(&adj, &y, problem.executor())?;
    let l = extended_adjoint_lowrank(&adj, &hermitian_factors(&y)?, problem.executor())?;
    let d = l.psi.relative_difference(&s.psi)?;
    rec.csv(
        "adjoint_routes.csv",
        &["route", "solves", "rel_diff_vs_slicewise"],
        &[
            vec!["slicewise".into(), s.solves_used.to_string(), num(0.0)],
            vec!["lowrank".into(), l.solves_used.to_string(), num(d)],
        ],
    )?;
    rec.at_most("route_agreement", d, at.route_tolerance);
    if at.baseline {
        baseline_counts(problem, &eval, &y, &riesz, route, rec)?;
    }
    Ok(())
}

fn tcc(cfg: &ExperimentConfig, problem: &ForwardProblem, truth: &ParamVector, rec: &mut Recorder) -> Result<()> {
    let tc = &cfg.tcc_scan;
    let grid = *problem.grid();
    let blocks = cfg.block_indices(&tc.blocks)?;
    if blocks.is_empty() {
        return Err(RunError::Config("tcc_scan needs at least one block".into()));
    }
    let dim = grid.dim();
    let direction = tc.direction.clone().unwrap_or_else(|| Profile::GaussianBump {
        center: grid.extents().iter().map(|e| e / 2.0).collect(),
        width: 0.15 * grid.max_extent(),
        amplitude: 1.0,
        base: 0.0,
    });
    direction.check(dim)?;
    let shape = direction.sample(&grid);
    let mut h = problem.model().zeros();
    for b in blocks {
        h.block_mut(b).copy_from_slice(&shape);
    }
    let ts = match &tc.t_list {
        Some(t) => t.clone(),
        None => geometric_steps(tc.t_start, tc.t_end, tc.count),
    };
    if ts.len() < 2 || ts.iter().any(|t| !(*t > 0.0)) {
        return Err(RunError::Config("tcc_scan needs at least two positive step sizes".into()));
    }
    let rep = tcc_scan(problem, truth, &h, &ts)?;
    let rows: Vec<Vec<String>> = (0..rep.t.len())
        .map(|i| {
            vec![num(rep.t[i]), num(rep.e_lin[i]), num(rep.image_diff[i]), num(rep.cross_term[i]), num(rep.bound_ratio[i])]
        })
        .collect();
    rec.csv("tcc_scan.csv", &["t", "E_lin", "image_diff", "cross_term", "bound_ratio"], &rows)?;
    let spread = rep.bound_ratio_spread();
    rec.csv(
        "tcc_summary.csv",
        &["metric", "value"],
        &[
            vec!["e_lin_slope".into(), num(rep.e_lin_slope)],
            vec!["image_diff_slope".into(), num(rep.image_diff_slope)],
            vec!["cross_term_slope".into(), num(rep.cross_term_slope)],
            vec!["bound_ratio_spread".into(), num(spread)],
            vec!["points".into(), rep.t.len().to_string()],
        ],
    )?;
    rec.check("scan_points", rep.t.len() as f64, &format!("== {}", ts.len()), rep.t.len() == ts.len());
    rec.within("e_lin_slope", rep.e_lin_slope, tc.e_lin_slope);
    rec.within("image_diff_slope", rep.image_diff_slope, tc.image_diff_slope);
    rec.within("cross_term_slope", rep.cross_term_slope, tc.cross_term_slope);
    rec.at_most("bound_ratio_spread", spread, tc.max_bound_ratio_spread);
    Ok(())
}

fn reconstruct(
    cfg: &ExperimentConfig,
    problem: &ForwardProblem,
    truth: &ParamVector,
    source_seed: u64,
    rec: &mut Recorder,
) -> Result<()> {
    let rc = &cfg.reconstruct;
    let model = problem.model();
    let grid = *problem.grid();
    let initial = cfg.params_vector(model, &rc.initial, Some(truth))?;
    model.check_admissible(&initial).map_err(RunError::setup)?;

    let (data, delta) = if rc.noise_level > 0.0 {
        if problem.mode() != ForwardMode::Ensemble {
            return Err(RunError::Config("noisy data needs an ensemble source (mode = ensemble)".into()));
        }
        let states = problem.states(truth)?;
        let seed = rc.noise_seed.unwrap_or(source_seed.wrapping_add(2));
        rec.noise_seed = Some(seed);
        let noisy = make_noisy_data(&states, rc.noise_level, seed).map_err(RunError::setup)?;
        (noisy.data, noisy.delta)
    } else if rc.noise_level == 0.0 {
        (problem.forward(truth)?, 0.0)
    } else {
        return Err(RunError::Config("noise_level must be non-negative".into()));
    };

    let mut lc = LandweberConfig::new(rc.riesz.build(grid, model.n_blocks())?, rc.k_max);
    lc.mu = match &rc.mu {
        StepConfig::Fixed(mu) => StepSize::Fixed(*mu),
        StepConfig::Named(s) if s == "auto" => StepSize::Auto { iterations: rc.power_iterations },
        StepConfig::Named(s) => return Err(RunError::Config(format!("mu must be a number or \"auto\", got {s:?}"))),
    };
    lc.tau = rc.tau;
    lc.delta = delta;
    lc.route = rc.route.into();
    lc.active_blocks = rc.active_blocks.as_ref().map(|b| cfg.block_indices(b)).transpose()?;
    let seed = source_seed.wrapping_add(3);
    lc.seed = seed;
    rec.task_seed = Some(seed);

    if rc.baseline {
        let eval = problem.evaluate(&initial)?;
        let (residual, _) = passim_core::forward::residual_of(&eval.cov, &data)?;
        baseline_counts(problem, &eval, &residual, &lc.riesz, lc.route, rec)?;
    }

    let (theta, trace) = landweber(problem, &data, &initial, &lc, Some(truth))?;
    let last = trace.records.len().saturating_sub(1);
    let rows: Vec<Vec<String>> = trace
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                r.iteration.to_string(),
                num(r.residual),
                r.param_error.map(num).unwrap_or_default(),
                num(r.mu),
                r.solves_cumulative.to_string(),
                if i == last { trace.stop_reason.as_str().into() } else { String::new() },
            ]
        })
        .collect();
    rec.csv(
        "landweber_trace.csv",
        &["iteration", "residual", "param_error", "mu", "solves_cumulative", "stop_reason"],
        &rows,
    )?;
    if rc.write_fields {
        for (b, name) in block_names(model).iter().enumerate() {
            let f = Field::new(grid, theta.block(b).iter().map(|v| Complex64::new(*v, 0.0)).collect())?;
            rec.field(&format!("theta_final_{name}"), &f)?;
        }
    }

    rec.check("finite_iterate", 0.0, "all finite", theta.is_finite());
    let ex = &rc.expect;
    if let Some(bound) = ex.max_error_ratio {
        let e0 = trace.records[0].param_error.unwrap_or(f64::NAN);
        let ratio = theta.plus(-1.0, truth)?.norm() / e0;
        rec.at_most("error_ratio", ratio, bound);
    }
    if let Some(m) = ex.monotone_iterations {
        let res = trace.residuals();
        let run = res.windows(2).take_while(|w| w[1] < w[0]).count();
        rec.check("monotone_iterations", run as f64, &format!(">= {m}"), run >= m);
    }
    if let Some(s) = &ex.stop_reason {
        rec.check("stop_reason", trace.iterations() as f64, &format!("stop = {s}"), trace.stop_reason.as_str() == s);
    }
    Ok(())
}

/// Manufactured solution `u = Π sin(π x_k / L_k)` with the source computed
/// from the continuous operator.
fn solver_test(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    use std::f64::consts::PI;
    if cfg.model.kind != ModelKind::Abc {
        return Err(RunError::Config("solver-test supports the abc model only".into()));
    }
    let st = &cfg.solver_test;
    if st.n_list.len() < 2 {
        return Err(RunError::Config("solver_test needs at least two resolutions".into()));
    }
    let params = &cfg.model.params;
    let dim = cfg.model.grid.dim;
    let zero = Profile::Constant { value: 0.0 };
    let a = params.a.clone().ok_or_else(|| RunError::Config("abc model needs an a profile".into()))?;
    let b: Vec<Profile> = params.b.clone().unwrap_or_else(|| vec![zero.clone(); dim]);
    let c = params.c.clone().unwrap_or(zero);

    let mut rows = Vec::new();
    let mut prev: Option<f64> = None;
    for &n in &st.n_list {
        let mut gc = cfg.model.grid.clone();
        gc.n_per_axis = n;
        let mut sub = cfg.clone();
        sub.model.grid = gc;
        let model = sub.build_model()?;
        let grid = *model.grid();
        let theta = sub.params_vector(&model, params, None)?;
        model.check_admissible(&theta).map_err(RunError::setup)?;
        let ext = grid.extents().to_vec();
        let u = |x: &[f64]| (0..dim).map(|k| (PI * x[k] / ext[k]).sin()).product::<f64>();
        let du = |x: &[f64], k: usize| {
            (0..dim)
                .map(|j| if j == k { PI / ext[j] * (PI * x[j] / ext[j]).cos() } else { (PI * x[j] / ext[j]).sin() })
                .product::<f64>()
        };
        let lap = |x: &[f64]| -u(x) * (0..dim).map(|k| (PI / ext[k]).powi(2)).sum::<f64>();
        let rhs = Field::from_fn(grid, |x| {
            let ga = a.gradient(x);
            let mut re = -a.value(x) * lap(x);
            for k in 0..dim {
                re += (b[k].value(x) - ga[k]) * du(x, k);
            }
            Complex64::new(re, c.value(x) * u(x))
        });
        let op = model.assemble(&theta)?;
        let uh = op.solve(&rhs)?;
        rec.extra_solves += op.solve_count();
        let exact = Field::from_fn(grid, |x| Complex64::new(u(x), 0.0));
        let diff = Field::new(grid, uh.values().iter().zip(exact.values()).map(|(p, q)| p - q).collect())?;
        let err = diff.norm();
        let ratio = prev.map(|p| p / err);
        if let Some(r) = ratio {
            rec.within(&format!("error_ratio_n{n}"), r, st.ratio_range);
        }
        rows.push(vec![n.to_string(), num(grid.spacing(0)), num(err), ratio.map(num).unwrap_or_default()]);
        prev = Some(err);
    }
    rec.csv("solver_order.csv", &["n", "h", "l2_error", "ratio"], &rows)?;
    Ok(())
}
