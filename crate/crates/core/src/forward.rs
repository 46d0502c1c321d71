//! The parameter-to-covariance map `F(θ) = cov[S(θ), S(θ)]`.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::exec::{Executor, Serial};
use crate::grid::{Field, Grid};
use crate::model::{Model, OperatorHandle};
use crate::param::ParamVector;
use crate::stochastic::{covariance_pushforward, sample_covariance, CovKernel, SourceCovariance, SourceEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Solve for each source sample and correlate the states (`J` solves).
    Ensemble,
    /// Push the source covariance through `D(θ)⁻¹` from both sides (`2·n_total` solves).
    Pushforward,
}

pub struct ForwardProblem {
    model: Model,
    source_cov: SourceCovariance,
    ensemble: Option<SourceEnsemble>,
    source_kernel: CovKernel,
    mode: ForwardMode,
    exec: Arc<dyn Executor>,
    solves: Arc<AtomicU64>,
}

impl core::fmt::Debug for ForwardProblem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ForwardProblem")
            .field("model", &self.model)
            .field("mode", &self.mode)
            .field("samples", &self.ensemble.as_ref().map(|e| e.len()))
            .finish_non_exhaustive()
    }
}

/// Everything computed at one parameter: the operator, the states
/// (ensemble mode) and `F(θ)`.
#[derive(Debug)]
pub struct Evaluation {
    pub theta: ParamVector,
    pub op: OperatorHandle,
    pub states: Option<Vec<Field>>,
    pub cov: CovKernel,
}

impl Evaluation {
    /// Fresh handle for `D(θ)^⋆` sharing the problem's solve counter.
    pub fn adjoint_operator(&self) -> OperatorHandle {
        self.op.adjoint()
    }
}

impl ForwardProblem {
    /// Ensemble mode: `F(θ)` is the sample covariance of the states driven by
    /// `ensemble`.
    pub fn ensemble(model: Model, source_cov: SourceCovariance, ensemble: SourceEnsemble) -> Result<Self> {
        if ensemble.grid() != model.grid() || source_cov.grid() != model.grid() {
            return Err(Error::GridMismatch);
        }
        let source_kernel = sample_covariance(ensemble.samples())?;
        Ok(Self::build(model, source_cov, Some(ensemble), source_kernel, ForwardMode::Ensemble))
    }

    /// Pushforward mode with the exact source covariance.
    pub fn pushforward(model: Model, source_cov: SourceCovariance) -> Result<Self> {
        if source_cov.grid() != model.grid() {
            return Err(Error::GridMismatch);
        }
        let kernel = source_cov.kernel().clone();
        Ok(Self::build(model, source_cov, None, kernel, ForwardMode::Pushforward))
    }

    /// Pushforward mode driven by the sample source covariance of `ensemble`;
    /// agrees with [`ForwardProblem::ensemble`] up to rounding.
    pub fn pushforward_of_ensemble(model: Model, source_cov: SourceCovariance, ensemble: SourceEnsemble) -> Result<Self> {
        let mut p = Self::ensemble(model, source_cov, ensemble)?;
        p.mode = ForwardMode::Pushforward;
        Ok(p)
    }

    fn build(
        model: Model,
        source_cov: SourceCovariance,
        ensemble: Option<SourceEnsemble>,
        source_kernel: CovKernel,
        mode: ForwardMode,
    ) -> Self {
        Self {
            model,
            source_cov,
            ensemble,
            source_kernel,
            mode,
            exec: Arc::new(Serial),
            solves: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn with_executor(mut self, exec: Arc<dyn Executor>) -> Self {
        self.exec = exec;
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn grid(&self) -> &Grid {
        self.model.grid()
    }

    pub fn mode(&self) -> ForwardMode {
        self.mode
    }

    pub fn source_covariance(&self) -> &SourceCovariance {
        &self.source_cov
    }

    /// Source covariance used by the pushforward route.
    pub fn source_kernel(&self) -> &CovKernel {
        &self.source_kernel
    }

    pub fn sources(&self) -> Option<&SourceEnsemble> {
        self.ensemble.as_ref()
    }

    pub fn executor(&self) -> &dyn Executor {
        &*self.exec
    }

    /// Total solves performed by every operator assembled through this problem.
    pub fn total_solves(&self) -> u64 {
        self.solves.load(Ordering::Relaxed)
    }

    /// Assembles `D(θ)` wired to the problem's solve counter.
    pub fn operator(&self, theta: &ParamVector) -> Result<OperatorHandle> {
        Ok(self.model.assemble(theta)?.with_shared_counter(self.solves.clone()))
    }

    /// `u_j = D(θ)⁻¹ f_j` for the stored sources.
    pub fn solve_states(&self, op: &OperatorHandle) -> Result<Vec<Field>> {
        let ens = self.ensemble.as_ref().ok_or_else(|| invalid("states require a source ensemble"))?;
        solve_many(op, ens.samples(), &*self.exec)
    }

    pub fn states(&self, theta: &ParamVector) -> Result<Vec<Field>> {
        let op = self.operator(theta)?;
        self.solve_states(&op)
    }

    pub fn evaluate(&self, theta: &ParamVector) -> Result<Evaluation> {
        let op = self.operator(theta)?;
        let (states, cov) = match self.mode {
            ForwardMode::Ensemble => {
                let states = self.solve_states(&op)?;
                let cov = sample_covariance(&states)?;
                (Some(states), cov)
            }
            ForwardMode::Pushforward => (None, covariance_pushforward(&op, &self.source_kernel, &*self.exec)?),
        };
        Ok(Evaluation { theta: theta.clone(), op, states, cov })
    }

    pub fn forward(&self, theta: &ParamVector) -> Result<CovKernel> {
        Ok(self.evaluate(theta)?.cov)
    }

    /// `r = F(θ) − y` and `‖r‖_𝒴`.
    pub fn residual(&self, theta: &ParamVector, data: &CovKernel) -> Result<(CovKernel, f64)> {
        let cov = self.forward(theta)?;
        residual_of(&cov, data)
    }
}

pub fn residual_of(cov: &CovKernel, data: &CovKernel) -> Result<(CovKernel, f64)> {
    let r = cov.sub(data)?;
    let norm = r.norm();
    Ok((r, norm))
}

/// Solves `op x = b` for each right-hand side, in parallel over fields.
pub fn solve_many(op: &OperatorHandle, rhs: &[Field], exec: &dyn Executor) -> Result<Vec<Field>> {
    let grid = *op.grid();
    let n = grid.n_total();
    let mut buf: Vec<Complex64> = Vec::with_capacity(n * rhs.len());
    for f in rhs {
        if f.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        buf.extend_from_slice(f.values());
    }
    op.factorization()?;
    let failed = core::sync::atomic::AtomicBool::new(false);
    exec.for_each_chunk(&mut buf, n, &|_, col| {
        if op.solve_in_place(col).is_err() {
            failed.store(true, Ordering::Relaxed);
        }
    });
    if failed.into_inner() {
        return Err(invalid("state solve failed"));
    }
    Ok(buf.chunks(n).map(|c| Field::new(grid, c.to_vec()).expect("grid")).collect())
}
