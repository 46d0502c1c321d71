//! Extended adjoint states, the covariance backpropagator `F'(θ)^*` and the
//! Riesz maps of the parameter space.
//!
//! For Hermitian data `y` and `D(θ)^⋆ Ψ = y` (column by column), the
//! backpropagated residual is
//!
//! `F'(θ)^* y = −2 I_X Re Σ_{x'} h^dim B(C(·, x'))^⋆ Ψ(·, x')`
//!
//! with `C = F(θ)`. Routing through [`Model::apply_b_adjoint`] keeps the
//! adjoint identity exact at the discrete level.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_complex::Complex64;
use once_cell::race::OnceBox;

use crate::banded::{BandLu, BandMatrix};
use crate::error::{ensure_len, invalid, Error, Result};
use crate::exec::{reduction_groups, Executor};
use crate::grid::{Field, Grid};
use crate::model::{
    Admissibility, AbcParams, BiHelmholtzParam, BiHelmholtzParameterization, Model, OperatorHandle,
};
use crate::param::ParamVector;
use crate::stochastic::{solve_columns, CovKernel};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Ridge added to the smoothing operators of the Riesz maps.
pub const RIESZ_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjointRoute {
    /// One adjoint solve per column of the data.
    Slicewise,
    /// One adjoint solve per factor of a Hermitian eigendecomposition.
    Lowrank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedAdjointState {
    pub psi: CovKernel,
    pub route: AdjointRoute,
    pub solves_used: u64,
}

/// `Ψ(·, x') = D^{-⋆} y(·, x')` for every column: `n_total` solves.
pub fn extended_adjoint_slicewise(
    op_adj: &OperatorHandle,
    y: &CovKernel,
    exec: &dyn Executor,
) -> Result<ExtendedAdjointState> {
    if op_adj.grid() != y.grid() {
        return Err(Error::GridMismatch);
    }
    let before = op_adj.solve_count();
    let mut psi = y.values().clone();
    solve_columns(op_adj, &mut psi, exec)?;
    Ok(ExtendedAdjointState {
        psi: CovKernel::new(*y.grid(), psi, false)?,
        route: AdjointRoute::Slicewise,
        solves_used: op_adj.solve_count() - before,
    })
}

/// `Ψ = Σ_i ψ_i conj(q_i)ᵀ` with `D^⋆ ψ_i = y_i` for `y = Σ_i y_i conj(q_i)ᵀ`.
pub fn extended_adjoint_lowrank(
    op_adj: &OperatorHandle,
    factors: &[(Field, Field)],
    exec: &dyn Executor,
) -> Result<ExtendedAdjointState> {
    let grid = *op_adj.grid();
    let before = op_adj.solve_count();
    let rhs: Vec<Field> = factors.iter().map(|(y, _)| y.clone()).collect();
    let psis = crate::forward::solve_many(op_adj, &rhs, exec)?;
    let pairs: Vec<(Field, Field)> = psis.into_iter().zip(factors.iter().map(|(_, q)| q.clone())).collect();
    Ok(ExtendedAdjointState {
        psi: CovKernel::from_outer_products(grid, &pairs, false)?,
        route: AdjointRoute::Lowrank,
        solves_used: op_adj.solve_count() - before,
    })
}

/// Maximum relative column residual `‖D^⋆ Ψ(·,x') − y(·,x')‖ / ‖y‖_F`.
pub fn extended_adjoint_residual(op_adj: &OperatorHandle, psi: &CovKernel, y: &CovKernel) -> Result<f64> {
    let n = y.grid().n_total();
    let scale = y.frobenius().max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for col in 0..n {
        let applied = op_adj.matrix().matvec(psi.column(col))?;
        let r: f64 = applied.iter().zip(y.column(col)).map(|(a, b)| (a - b).norm_sqr()).sum();
        worst = worst.max(libm::sqrt(r) / scale);
    }
    Ok(worst)
}

/// `Σ_{x'} h^dim B(C(·,x'))^⋆ W(·,x')` as concatenated complex blocks.
/// Columns are reduced in fixed groups, so the sum does not depend on the
/// executor.
fn accumulate_dual(
    model: &Model,
    theta: &ParamVector,
    cov_u: &CovKernel,
    w: &[&CovKernel],
    exec: &dyn Executor,
) -> Result<Vec<Complex64>> {
    let grid = *model.grid();
    if cov_u.grid() != &grid || w.iter().any(|k| k.grid() != &grid) {
        return Err(Error::GridMismatch);
    }
    let n = grid.n_total();
    let len = model.n_blocks() * n;
    let groups = reduction_groups(n);
    let per = n.div_ceil(groups);
    let mut partial = vec![ZERO; groups * len];
    let scale = Complex64::new(grid.weight(), 0.0);
    let failed = core::sync::atomic::AtomicBool::new(false);
    exec.for_each_chunk(&mut partial, len, &|g, acc| {
        for col in g * per..((g + 1) * per).min(n) {
            for k in w {
                if model.accumulate_b_adjoint(theta, cov_u.column(col), k.column(col), scale, acc).is_err() {
                    failed.store(true, core::sync::atomic::Ordering::Relaxed);
                }
            }
        }
    });
    if failed.into_inner() {
        return Err(invalid("backpropagation accumulation failed"));
    }
    let mut out = vec![ZERO; len];
    for chunk in partial.chunks(len) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Ok(out)
}

fn real_direction(grid: Grid, data: &[Complex64], factor: f64) -> ParamVector {
    ParamVector::from_data(grid, data.iter().map(|v| factor * v.re).collect()).expect("block layout")
}

/// `F'(θ)^* y` given `C = F(θ)` and the extended adjoint state of `y`.
pub fn backprop(
    model: &Model,
    theta: &ParamVector,
    cov_u: &CovKernel,
    psi: &ExtendedAdjointState,
    riesz: &RieszMap,
    exec: &dyn Executor,
) -> Result<ParamVector> {
    let dual = accumulate_dual(model, theta, cov_u, &[&psi.psi], exec)?;
    riesz.apply(&real_direction(*model.grid(), &dual, -2.0))
}

/// [`backprop`] for the a,b,c-problem.
pub fn backprop_abc(
    params: &AbcParams,
    cov_u: &CovKernel,
    psi: &ExtendedAdjointState,
    riesz: &RieszMap,
    exec: &dyn Executor,
) -> Result<ParamVector> {
    let theta = params.to_vector()?;
    let grid = *theta.grid();
    let model = Model::abc(grid, Admissibility::with_defaults(params.a_lower, &grid));
    backprop(&model, &theta, cov_u, psi, riesz, exec)
}

/// [`backprop`] for the bi-Helmholtz problem in the wavenumber
/// parameterization: `4 I_X Re(k Σ_{x'} h^dim conj(Δ C) Ψ)`.
pub fn backprop_bihelmholtz(
    param: &BiHelmholtzParam,
    cov_u: &CovKernel,
    psi: &ExtendedAdjointState,
    riesz: &RieszMap,
    exec: &dyn Executor,
) -> Result<ParamVector> {
    let theta = ParamVector::from_blocks(core::slice::from_ref(&param.k))?;
    let model = Model::bihelmholtz(*theta.grid(), BiHelmholtzParameterization::Wavenumber);
    backprop(&model, &theta, cov_u, psi, riesz, exec)
}

/// Reference backpropagation that differentiates `D⁻¹ Π D⁻ᴴ` in both
/// factors. It needs adjoint states of both `y` and `yᴴ`, i.e.
/// `2 · n_total` solves. Returns the gradient and the solves used.
pub fn backprop_direct(
    model: &Model,
    theta: &ParamVector,
    op_adj: &OperatorHandle,
    cov_u: &CovKernel,
    y: &CovKernel,
    riesz: &RieszMap,
    exec: &dyn Executor,
) -> Result<(ParamVector, u64)> {
    let before = op_adj.solve_count();
    let left = extended_adjoint_slicewise(op_adj, y, exec)?;
    let right = extended_adjoint_slicewise(op_adj, &y.conj_transpose(), exec)?;
    let dual = accumulate_dual(model, theta, cov_u, &[&left.psi, &right.psi], exec)?;
    let g = riesz.apply(&real_direction(*model.grid(), &dual, -1.0))?;
    Ok((g, op_adj.solve_count() - before))
}

/// Adjoint of the linearized state map for a single state:
/// `S'(θ)^* y = −I_X Re B(u)^⋆ ψ` with `D^⋆ ψ = y`. One solve.
pub fn full_measurement_adjoint(
    model: &Model,
    theta: &ParamVector,
    op_adj: &OperatorHandle,
    u: &Field,
    y: &Field,
    riesz: &RieszMap,
) -> Result<ParamVector> {
    let psi = op_adj.solve(y)?;
    let dual = model.apply_b_adjoint(theta, u, &psi)?;
    riesz.apply(&real_direction(*model.grid(), dual.data(), -1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RieszKind {
    Identity,
    /// `(−Δ + εI)⁻¹`
    InvLaplacian,
    /// `(Δ² + εI)⁻¹`
    InvBilaplacian,
}

/// Block-diagonal Riesz map `I_X = M⁻¹`; the parameter inner product is
/// `⟨h, g⟩_X = h^dim Σ_blocks hᵀ M g`.
pub struct RieszMap {
    grid: Grid,
    kinds: Vec<RieszKind>,
    laplacian: OnceBox<(BandMatrix, BandLu)>,
    bilaplacian: OnceBox<(BandMatrix, BandLu)>,
}

impl Clone for RieszMap {
    fn clone(&self) -> Self {
        RieszMap::new(self.grid, self.kinds.clone())
    }
}

impl core::fmt::Debug for RieszMap {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("RieszMap").field("kinds", &self.kinds).finish()
    }
}

impl RieszMap {
    pub fn new(grid: Grid, kinds: Vec<RieszKind>) -> Self {
        Self { grid, kinds, laplacian: OnceBox::new(), bilaplacian: OnceBox::new() }
    }

    pub fn identity(grid: Grid, blocks: usize) -> Self {
        Self::new(grid, vec![RieszKind::Identity; blocks])
    }

    pub fn uniform(grid: Grid, blocks: usize, kind: RieszKind) -> Self {
        Self::new(grid, vec![kind; blocks])
    }

    pub fn kinds(&self) -> &[RieszKind] {
        &self.kinds
    }

    fn smoother(&self, kind: RieszKind) -> Result<Option<&(BandMatrix, BandLu)>> {
        let cell = match kind {
            RieszKind::Identity => return Ok(None),
            RieszKind::InvLaplacian => &self.laplacian,
            RieszKind::InvBilaplacian => &self.bilaplacian,
        };
        cell.get_or_try_init(|| {
            let m = smoothing_matrix(&self.grid, kind);
            let lu = m.factorize()?;
            Ok(Box::new((m, lu)))
        })
        .map(Some)
    }

    fn check(&self, g: &ParamVector) -> Result<()> {
        if g.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        ensure_len(self.kinds.len(), g.n_blocks())
    }

    /// `I_X g = M⁻¹ g` blockwise.
    pub fn apply(&self, g: &ParamVector) -> Result<ParamVector> {
        self.check(g)?;
        let mut out = g.clone();
        for (b, &kind) in self.kinds.iter().enumerate() {
            if let Some((_, lu)) = self.smoother(kind)? {
                let mut x: Vec<Complex64> = g.block(b).iter().map(|v| Complex64::new(*v, 0.0)).collect();
                lu.solve_in_place(&mut x)?;
                for (o, v) in out.block_mut(b).iter_mut().zip(x) {
                    *o = v.re;
                }
            }
        }
        Ok(out)
    }

    /// `M g` blockwise (the inverse of [`RieszMap::apply`]).
    pub fn apply_metric(&self, g: &ParamVector) -> Result<ParamVector> {
        self.check(g)?;
        let mut out = g.clone();
        for (b, &kind) in self.kinds.iter().enumerate() {
            if let Some((m, _)) = self.smoother(kind)? {
                let x: Vec<Complex64> = g.block(b).iter().map(|v| Complex64::new(*v, 0.0)).collect();
                for (o, v) in out.block_mut(b).iter_mut().zip(m.matvec(&x)?) {
                    *o = v.re;
                }
            }
        }
        Ok(out)
    }

    /// `⟨h, g⟩_X`
    pub fn inner_product(&self, h: &ParamVector, g: &ParamVector) -> Result<f64> {
        h.dot(&self.apply_metric(g)?)
    }

    pub fn norm(&self, h: &ParamVector) -> Result<f64> {
        Ok(libm::sqrt(self.inner_product(h, h)?.max(0.0)))
    }
}

/// `−Δ + εI` or `Δ² + εI` with the Dirichlet 5-point Laplacian.
fn smoothing_matrix(grid: &Grid, kind: RieszKind) -> BandMatrix {
    let n = grid.n_total();
    let bw = grid.stride(0);
    let mut lap = BandMatrix::zeros(n, bw, bw);
    for i in 0..n {
        for ax in 0..grid.dim() {
            let inv_h2 = 1.0 / (grid.spacing(ax) * grid.spacing(ax));
            lap.add(i, i, Complex64::new(-2.0 * inv_h2, 0.0));
            for off in [-1isize, 1] {
                if let Some(j) = grid.neighbor(i, ax, off) {
                    lap.add(i, j, Complex64::new(inv_h2, 0.0));
                }
            }
        }
    }
    let mut out = match kind {
        RieszKind::InvLaplacian => {
            let mut m = BandMatrix::zeros(n, bw, bw);
            for i in 0..n {
                for j in lap.row_span(i) {
                    m.add(i, j, -lap.get(i, j));
                }
            }
            m
        }
        RieszKind::InvBilaplacian => {
            let mut m = BandMatrix::zeros(n, 2 * bw, 2 * bw);
            for i in 0..n {
                for k in lap.row_span(i) {
                    let lik = lap.get(i, k);
                    if lik == ZERO {
                        continue;
                    }
                    for j in lap.row_span(k) {
                        m.add(i, j, lik * lap.get(k, j));
                    }
                }
            }
            m
        }
        RieszKind::Identity => BandMatrix::zeros(n, 0, 0),
    };
    for i in 0..n {
        out.add(i, i, Complex64::new(RIESZ_RIDGE, 0.0));
    }
    out
}

/// Dense copy of the Riesz map of one block, for tests and diagnostics.
pub fn riesz_matrix(grid: &Grid, kind: RieszKind) -> Result<DMatrix<f64>> {
    let n = grid.n_total();
    let map = RieszMap::new(*grid, vec![kind]);
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = ParamVector::zeros(*grid, 1);
        e.data_mut()[j] = 1.0;
        let col = map.apply(&e)?;
        for i in 0..n {
            out[(i, j)] = col.data()[i];
        }
    }
    Ok(out)
}
