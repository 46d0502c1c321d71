//! Landweber iteration with discrepancy-principle stopping.

use alloc::vec::Vec;

use crate::adjoint::{AdjointRoute, RieszMap};
use crate::derivative::{backprop_at, gradient_of_misfit, jacobian_apply};
use crate::error::{ensure_len, invalid, Error, Result};
use crate::forward::ForwardProblem;
use crate::grid::Field;
use crate::param::ParamVector;
use crate::stochastic::{complex_normal, sample_covariance, sample_rng, CovKernel};
use rand_distr::{Distribution, StandardNormal};

/// Offset separating measurement-noise streams from source streams.
const NOISE_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyData {
    pub data: CovKernel,
    pub clean: CovKernel,
    /// Realized `‖y^δ − y‖_𝒴`.
    pub delta: f64,
}

/// Adds complex Gaussian noise of standard deviation
/// `noise_level · rms(states)` to every state sample, then correlates.
pub fn make_noisy_data(states: &[Field], noise_level: f64, seed: u64) -> Result<NoisyData> {
    if !(noise_level >= 0.0) {
        return Err(invalid("noise level must be non-negative"));
    }
    let clean = sample_covariance(states)?;
    let count: usize = states.iter().map(|s| s.values().len()).sum();
    let rms = libm::sqrt(states.iter().flat_map(|s| s.values()).map(|v| v.norm_sqr()).sum::<f64>() / count as f64);
    let sigma = noise_level * rms;
    if sigma == 0.0 {
        return Ok(NoisyData { data: clean.clone(), clean, delta: 0.0 });
    }
    let noisy: Vec<Field> = states
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let noise = complex_normal(&mut sample_rng(seed, NOISE_STREAM + j as u64), s.values().len());
            let v = s.values().iter().zip(noise).map(|(u, e)| u + e * sigma).collect();
            Field::new(*s.grid(), v)
        })
        .collect::<Result<_>>()?;
    let data = sample_covariance(&noisy)?;
    let delta = data.sub(&clean)?.norm();
    Ok(NoisyData { data, clean, delta })
}

/// Zeroes every block not listed in `active`.
pub fn mask_blocks(g: &mut ParamVector, active: Option<&[usize]>) {
    if let Some(active) = active {
        for b in 0..g.n_blocks() {
            if !active.contains(&b) {
                g.block_mut(b).fill(0.0);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEstimate {
    /// Estimated `‖F'(θ0)‖²` in the `X → 𝒴` operator norm.
    pub lipschitz: f64,
    /// `0.9 / lipschitz`
    pub mu: f64,
}

/// Power iteration for the largest eigenvalue of `F'(θ0)^* F'(θ0)` on the
/// active blocks.
pub fn estimate_step(
    problem: &ForwardProblem,
    theta0: &ParamVector,
    riesz: &RieszMap,
    active: Option<&[usize]>,
    iterations: usize,
    seed: u64,
) -> Result<StepEstimate> {
    let eval = problem.evaluate(theta0)?;
    let mut rng = sample_rng(seed, 0);
    let mut v = ParamVector::zeros(*theta0.grid(), theta0.n_blocks());
    for x in v.data_mut() {
        *x = StandardNormal.sample(&mut rng);
    }
    mask_blocks(&mut v, active);
    let mut lambda = 0.0;
    for _ in 0..iterations.max(1) {
        let norm = riesz.norm(&v)?;
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroOperator);
        }
        v = v.scaled(1.0 / norm);
        let jv = jacobian_apply(problem, &eval, &v)?;
        let (mut w, _) = backprop_at(problem, &eval, &jv, riesz, AdjointRoute::Slicewise)?;
        mask_blocks(&mut w, active);
        lambda = riesz.inner_product(&v, &w)?;
        v = w;
    }
    if !(lambda > 0.0) {
        return Err(Error::ZeroOperator);
    }
    Ok(StepEstimate { lipschitz: lambda, mu: 0.9 / lambda })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// [`estimate_step`] at the initial guess with the given iteration count.
    Auto { iterations: usize },
}

#[derive(Debug, Clone)]
pub struct LandweberConfig {
    pub mu: StepSize,
    pub k_max: usize,
    /// Discrepancy factor `τ`.
    pub tau: f64,
    /// Noise level `δ` in the 𝒴 norm; zero disables the discrepancy stop.
    pub delta: f64,
    pub riesz: RieszMap,
    /// Parameter blocks being reconstructed; `None` updates all of them.
    pub active_blocks: Option<Vec<usize>>,
    pub route: AdjointRoute,
    pub seed: u64,
}

impl LandweberConfig {
    pub fn new(riesz: RieszMap, k_max: usize) -> Self {
        Self {
            mu: StepSize::Auto { iterations: 20 },
            k_max,
            tau: 1.5,
            delta: 0.0,
            riesz,
            active_blocks: None,
            route: AdjointRoute::Slicewise,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if let StepSize::Fixed(mu) = self.mu {
            if !(mu > 0.0) {
                return Err(invalid("fixed step size must be positive"));
            }
        }
        if !(self.delta >= 0.0) {
            return Err(invalid("delta must be non-negative"));
        }
        if self.delta > 0.0 && !(self.tau > 1.0) {
            return Err(invalid("tau must exceed 1 when delta > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Discrepancy,
    KMax,
    Divergence,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Discrepancy => "discrepancy",
            StopReason::KMax => "k_max",
            StopReason::Divergence => "divergence",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual: f64,
    /// `‖θ_k − θ†‖_{L²}` when the truth is known.
    pub param_error: Option<f64>,
    pub mu: f64,
    pub solves_cumulative: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub stop_reason: StopReason,
}

impl IterationTrace {
    /// Number of parameter updates performed.
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }
}

/// Consecutive residual increases that count as divergence.
const DIVERGENCE_RUN: usize = 5;

/// `θ_{k+1} = P(θ_k − μ F'(θ_k)^*(F(θ_k) − y^δ))`, stopping when
/// `‖F(θ_k) − y^δ‖ ≤ τδ`, at `k_max`, or after a run of residual increases.
pub fn landweber(
    problem: &ForwardProblem,
    data: &CovKernel,
    theta0: &ParamVector,
    config: &LandweberConfig,
    truth: Option<&ParamVector>,
) -> Result<(ParamVector, IterationTrace)> {
    config.validate()?;
    let model = problem.model();
    ensure_len(model.n_blocks(), theta0.n_blocks())?;
    let active = config.active_blocks.as_deref();
    let mut theta = model.project(theta0);
    let mu = match config.mu {
        StepSize::Fixed(mu) => mu,
        StepSize::Auto { iterations } => {
            estimate_step(problem, &theta, &config.riesz, active, iterations, config.seed)?.mu
        }
    };
    let param_error = |t: &ParamVector| -> Result<Option<f64>> {
        truth.map(|tr| Ok(t.plus(-1.0, tr)?.norm())).transpose()
    };
    let threshold = config.tau * config.delta;
    let mut records = Vec::with_capacity(config.k_max + 1);
    let mut rises = 0;
    let mut k = 0;
    let stop_reason = loop {
        let ge = gradient_of_misfit(problem, &theta, data, &config.riesz, config.route)?;
        records.push(IterationRecord {
            iteration: k,
            residual: ge.residual_norm,
            param_error: param_error(&theta)?,
            mu,
            solves_cumulative: problem.total_solves(),
        });
        if let [.., prev, last] = records.as_slice() {
            rises = if last.residual > prev.residual { rises + 1 } else { 0 };
        }
        if ge.residual_norm <= threshold {
            break StopReason::Discrepancy;
        }
        if rises >= DIVERGENCE_RUN {
            break StopReason::Divergence;
        }
        if k >= config.k_max {
            break StopReason::KMax;
        }
        let mut g = ge.gradient;
        mask_blocks(&mut g, active);
        theta = model.project(&theta.plus(-mu, &g)?);
        k += 1;
    };
    log::info!(
        "landweber stopped after {k} iterations ({}), residual {:.3e}",
        stop_reason.as_str(),
        records.last().map_or(f64::NAN, |r| r.residual)
    );
    Ok((theta, IterationTrace { records, stop_reason }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivative::log_log_slope;
    use crate::grid::Grid;
    use crate::model::{Admissibility, Model};
    use crate::stochastic::{sample_ensemble, SourceCovariance};

    fn c_problem(n: usize) -> (ForwardProblem, ParamVector, ParamVector) {
        let grid = Grid::uniform(2, n, 1.0).unwrap();
        let model = Model::abc(grid, Admissibility::with_defaults(1.0, &grid));
        let mut base = model.zeros();
        base.block_mut(0).fill(1.0);
        let mut truth = base.clone();
        for (i, v) in truth.block_mut(3).iter_mut().enumerate() {
            let x = grid.coords(i);
            let r2 = (x[0] - 0.5) * (x[0] - 0.5) + (x[1] - 0.5) * (x[1] - 0.5);
            *v = 0.8 * libm::exp(-r2 / 0.05);
        }
        let cov = SourceCovariance::white(grid, 1.0).unwrap();
        let ens = sample_ensemble(&cov, 4, 7).unwrap();
        (ForwardProblem::ensemble(model, cov, ens).unwrap(), base, truth)
    }

    #[test]
    fn noise_free_data_is_exact_and_noise_scales_linearly() {
        let (p, _, truth) = c_problem(6);
        let states = p.states(&truth).unwrap();
        let clean = make_noisy_data(&states, 0.0, 1).unwrap();
        assert_eq!(clean.delta, 0.0);
        assert_eq!(clean.data, sample_covariance(&states).unwrap());
        let levels = [0.01, 0.03, 0.1];
        let mut deltas = Vec::new();
        for l in levels {
            let d = make_noisy_data(&states, l, 1).unwrap();
            assert!(d.data.is_covariance());
            deltas.push(d.delta);
        }
        let slope = log_log_slope(&levels, &deltas);
        assert!((0.8..=1.2).contains(&slope), "{slope}");
    }

    #[test]
    fn step_estimate_is_homogeneous_and_safe() {
        let (p, base, _) = c_problem(5);
        let grid = *p.grid();
        let riesz = RieszMap::identity(grid, 4);
        let active = [3usize];
        let s1 = estimate_step(&p, &base, &riesz, Some(&active), 20, 3).unwrap();
        assert!(s1.mu * s1.lipschitz < 1.0);
        // scaling sources by α scales F and F' by α²
        let scaled = ForwardProblem::ensemble(p.model().clone(), p.source_covariance().clone(), p.sources().unwrap().scaled(2.0)).unwrap();
        let s2 = estimate_step(&scaled, &base, &riesz, Some(&active), 20, 3).unwrap();
        assert!((s2.lipschitz / s1.lipschitz - 16.0).abs() < 1e-6 * 16.0);
    }

    #[test]
    fn exact_data_stops_immediately() {
        let (p, base, _) = c_problem(5);
        let data = p.forward(&base).unwrap();
        let mut cfg = LandweberConfig::new(RieszMap::identity(*p.grid(), 4), 10);
        cfg.mu = StepSize::Fixed(1.0);
        cfg.delta = 1e-12;
        let (theta, trace) = landweber(&p, &data, &base, &cfg, None).unwrap();
        assert_eq!(theta, base);
        assert_eq!(trace.stop_reason, StopReason::Discrepancy);
        assert_eq!(trace.iterations(), 0);
    }

    #[test]
    fn iterates_stay_admissible_and_trace_is_bounded() {
        let (p, base, truth) = c_problem(5);
        let data = p.forward(&truth).unwrap();
        let mut cfg = LandweberConfig::new(RieszMap::identity(*p.grid(), 4), 6);
        cfg.active_blocks = Some(alloc::vec![3]);
        let (theta, trace) = landweber(&p, &data, &base, &cfg, Some(&truth)).unwrap();
        assert!(p.model().check_admissible(&theta).is_ok());
        assert!(trace.records.len() <= cfg.k_max + 1);
        assert_eq!(trace.stop_reason, StopReason::KMax);
        assert_eq!(theta.block(0), base.block(0));
        let r = trace.residuals();
        assert!(r.windows(2).all(|w| w[1] < w[0]));
        // bit-reproducible
        let (theta2, trace2) = landweber(&p, &data, &base, &cfg, Some(&truth)).unwrap();
        assert_eq!(theta, theta2);
        assert_eq!(trace.residuals(), trace2.residuals());
    }

    #[test]
    fn divergence_is_detected() {
        // μ = 3/L amplifies the leading error component by −2 per step
        let (p, _, truth) = c_problem(5);
        let data = p.forward(&truth).unwrap();
        let riesz = RieszMap::identity(*p.grid(), 4);
        let active = [3usize];
        let est = estimate_step(&p, &truth, &riesz, Some(&active), 30, 1).unwrap();
        let mut cfg = LandweberConfig::new(riesz, 50);
        cfg.active_blocks = Some(alloc::vec![3]);
        cfg.mu = StepSize::Fixed(3.0 / est.lipschitz);
        let mut start = truth.clone();
        for v in start.block_mut(3) {
            *v += 1e-4;
        }
        let (_, trace) = landweber(&p, &data, &start, &cfg, None).unwrap();
        assert_eq!(trace.stop_reason, StopReason::Divergence);
        assert!(trace.iterations() < 50);
    }
}
