//! Parametric elliptic operators `D(θ)`, their exact discrete adjoints and the
//! parameter-linear piece `B(u)`.
//!
//! Two models are provided:
//!
//! * the a,b,c-problem `−div(a∇u) + b·∇u + i·c·u = f` with `u = 0` on the
//!   boundary, and
//! * the bi-Helmholtz problem `Δ²u − k²Δu + u = f` with `u = ∂ₙu = 0` on the
//!   boundary.
//!
//! The diffusion term uses the staggered edge stencil (coefficient interpolated
//! to edges), the advection term the nodal central difference. The clamped
//! biharmonic is `L_extᵀ L_ext`, where `L_ext` evaluates the 5-point Laplacian
//! on interior *and* boundary nodes with a further layer of implicit zeros.
//!
//! `D(θ)^⋆` is always the weighted conjugate transpose of the assembled
//! matrix. With the uniform node weight `h^dim` this is the plain conjugate
//! transpose, so `⟨D u, w⟩ = ⟨u, D^⋆ w⟩` holds to rounding.

use alloc::boxed::Box;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;
use once_cell::race::OnceBox;

use crate::banded::{BandLu, BandMatrix};
use crate::error::{ensure_len, Error, Result};
use crate::grid::{Field, Grid, RealField, MAX_DIM};
use crate::param::{DualDirection, ParamVector};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// System matrix of `D(θ)` (or `D(θ)^⋆`) with a lazily computed LU
/// factorization and a monotone solve counter.
#[derive(Debug)]
pub struct OperatorHandle {
    grid: Grid,
    matrix: BandMatrix,
    factor: OnceBox<BandLu>,
    solves: AtomicU64,
    shared: Option<Arc<AtomicU64>>,
    adjoint: bool,
}

impl OperatorHandle {
    pub fn new(grid: Grid, matrix: BandMatrix, adjoint: bool) -> Result<Self> {
        ensure_len(grid.n_total(), matrix.dim())?;
        Ok(Self { grid, matrix, factor: OnceBox::new(), solves: AtomicU64::new(0), shared: None, adjoint })
    }

    /// Additionally counts every solve in `counter` (inherited by [`Self::adjoint`]).
    pub fn with_shared_counter(mut self, counter: Arc<AtomicU64>) -> Self {
        self.shared = Some(counter);
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &BandMatrix {
        &self.matrix
    }

    /// Whether this handle represents `D(θ)^⋆`.
    pub fn is_adjoint(&self) -> bool {
        self.adjoint
    }

    pub fn solve_count(&self) -> u64 {
        self.solves.load(Ordering::Relaxed)
    }

    /// Handle for the adjoint operator: the conjugate transpose, which equals
    /// `W⁻¹ Aᴴ W` for the uniform weight `W = h^dim·I`. The new handle has its
    /// own factorization and counter.
    pub fn adjoint(&self) -> OperatorHandle {
        OperatorHandle {
            grid: self.grid,
            matrix: self.matrix.conj_transpose(),
            factor: OnceBox::new(),
            solves: AtomicU64::new(0),
            shared: self.shared.clone(),
            adjoint: !self.adjoint,
        }
    }

    pub fn apply(&self, u: &Field) -> Result<Field> {
        if u.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        Field::new(self.grid, self.matrix.matvec(u.values())?)
    }

    pub fn factorization(&self) -> Result<&BandLu> {
        self.factor.get_or_try_init(|| self.matrix.factorize().map(Box::new))
    }

    /// Solves in place; counts as one solve.
    pub fn solve_in_place(&self, rhs: &mut [Complex64]) -> Result<()> {
        let lu = self.factorization()?;
        lu.solve_in_place(rhs)?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        if let Some(c) = &self.shared {
            c.fetch_add(1, Ordering::Relaxed);
        }
        Ok(())
    }

    pub fn solve(&self, rhs: &Field) -> Result<Field> {
        if rhs.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let mut x = rhs.values().to_vec();
        self.solve_in_place(&mut x)?;
        Field::new(self.grid, x)
    }
}

/// Admissible set for a,b,c parameters: `a ≥ a_lower`, `|b| ≤ b_max`, `|c| ≤ c_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admissibility {
    pub a_lower: f64,
    pub b_max: f64,
    pub c_max: f64,
}

impl Admissibility {
    /// Defaults `b_max = a_lower / (2·extent)`, `c_max = a_lower`.
    pub fn with_defaults(a_lower: f64, grid: &Grid) -> Self {
        Self { a_lower, b_max: a_lower / (2.0 * grid.max_extent()), c_max: a_lower }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiHelmholtzParameterization {
    /// The parameter vector holds `θ = k²`; the model is affine in it.
    Squared,
    /// The parameter vector holds `k`; derivatives carry the factor `2k`.
    Wavenumber,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbcModel {
    pub grid: Grid,
    pub admissibility: Admissibility,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiHelmholtzModel {
    pub grid: Grid,
    pub parameterization: BiHelmholtzParameterization,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Abc(AbcModel),
    BiHelmholtz(BiHelmholtzModel),
}

/// Typed view of an a,b,c parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AbcParams {
    pub a: RealField,
    pub b: Vec<RealField>,
    pub c: RealField,
    pub a_lower: f64,
}

impl AbcParams {
    pub fn to_vector(&self) -> Result<ParamVector> {
        let mut blocks = Vec::with_capacity(self.b.len() + 2);
        blocks.push(self.a.clone());
        blocks.extend(self.b.iter().cloned());
        blocks.push(self.c.clone());
        ParamVector::from_blocks(&blocks)
    }

    pub fn from_vector(v: &ParamVector, a_lower: f64) -> Result<Self> {
        let dim = v.grid().dim();
        ensure_len(dim + 2, v.n_blocks())?;
        Ok(Self {
            a: v.block_field(0),
            b: (0..dim).map(|k| v.block_field(1 + k)).collect(),
            c: v.block_field(dim + 1),
            a_lower,
        })
    }
}

/// Typed view of a bi-Helmholtz wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct BiHelmholtzParam {
    pub k: RealField,
}

impl Model {
    pub fn abc(grid: Grid, admissibility: Admissibility) -> Self {
        Model::Abc(AbcModel { grid, admissibility })
    }

    pub fn bihelmholtz(grid: Grid, parameterization: BiHelmholtzParameterization) -> Self {
        Model::BiHelmholtz(BiHelmholtzModel { grid, parameterization })
    }

    pub fn grid(&self) -> &Grid {
        match self {
            Model::Abc(m) => &m.grid,
            Model::BiHelmholtz(m) => &m.grid,
        }
    }

    pub fn n_blocks(&self) -> usize {
        match self {
            Model::Abc(m) => m.grid.dim() + 2,
            Model::BiHelmholtz(_) => 1,
        }
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector::zeros(*self.grid(), self.n_blocks())
    }

    fn check_param(&self, theta: &ParamVector) -> Result<()> {
        if theta.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        ensure_len(self.n_blocks(), theta.n_blocks())
    }

    /// Verifies `θ ∈ 𝒟`.
    pub fn check_admissible(&self, theta: &ParamVector) -> Result<()> {
        self.check_param(theta)?;
        if !theta.is_finite() {
            return Err(Error::Admissibility("parameter has non-finite entries".into()));
        }
        match self {
            Model::Abc(m) => {
                let adm = &m.admissibility;
                let dim = m.grid.dim();
                let a_min = theta.block(0).iter().copied().fold(f64::INFINITY, f64::min);
                if !(adm.a_lower > 0.0) || a_min < adm.a_lower {
                    return Err(Error::Admissibility(format!(
                        "min(a) = {a_min} is below the ellipticity bound {}",
                        adm.a_lower
                    )));
                }
                for k in 0..dim {
                    let bmax = theta.block(1 + k).iter().fold(0.0, |m, v| f64::max(m, v.abs()));
                    if bmax > adm.b_max {
                        return Err(Error::Admissibility(format!("|b_{k}| = {bmax} exceeds {}", adm.b_max)));
                    }
                }
                let cmax = theta.block(dim + 1).iter().fold(0.0, |m, v| f64::max(m, v.abs()));
                if cmax > adm.c_max {
                    return Err(Error::Admissibility(format!("|c| = {cmax} exceeds {}", adm.c_max)));
                }
                Ok(())
            }
            Model::BiHelmholtz(m) => {
                if m.parameterization == BiHelmholtzParameterization::Squared
                    && theta.data().iter().any(|&v| v < 0.0)
                {
                    return Err(Error::Admissibility("θ = k² must be non-negative".into()));
                }
                Ok(())
            }
        }
    }

    /// Pointwise clamp onto the admissible set.
    pub fn project(&self, theta: &ParamVector) -> ParamVector {
        let mut out = theta.clone();
        match self {
            Model::Abc(m) => {
                let adm = m.admissibility;
                let dim = m.grid.dim();
                for v in out.block_mut(0) {
                    *v = v.max(adm.a_lower);
                }
                for k in 0..dim {
                    for v in out.block_mut(1 + k) {
                        *v = v.clamp(-adm.b_max, adm.b_max);
                    }
                }
                for v in out.block_mut(dim + 1) {
                    *v = v.clamp(-adm.c_max, adm.c_max);
                }
            }
            Model::BiHelmholtz(m) => {
                if m.parameterization == BiHelmholtzParameterization::Squared {
                    for v in out.data_mut() {
                        *v = v.max(0.0);
                    }
                }
            }
        }
        out
    }

    /// Assembles `D(θ)` after checking admissibility.
    pub fn assemble(&self, theta: &ParamVector) -> Result<OperatorHandle> {
        self.check_admissible(theta)?;
        let matrix = match self {
            Model::Abc(m) => abc_matrix(&m.grid, theta),
            Model::BiHelmholtz(m) => bihelmholtz_matrix(&m.grid, &m.squared(theta)),
        };
        OperatorHandle::new(*self.grid(), matrix, false)
    }

    /// Assembles `D(θ)^⋆` as the conjugate transpose of `D(θ)`.
    pub fn assemble_adjoint(&self, theta: &ParamVector) -> Result<OperatorHandle> {
        Ok(self.assemble(theta)?.adjoint())
    }

    /// `D(θ)u` evaluated with grid stencils, without assembling a matrix.
    pub fn apply_operator(&self, theta: &ParamVector, u: &Field) -> Result<Field> {
        self.check_param(theta)?;
        let grid = *self.grid();
        if u.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        let values = match self {
            Model::Abc(_) => {
                let dim = grid.dim();
                let mut out = diffusion_apply(&grid, theta.block(0), u.values());
                for k in 0..dim {
                    let g = grid.central_difference(k, u.values());
                    for ((o, gi), b) in out.iter_mut().zip(g).zip(theta.block(1 + k)) {
                        *o += gi * *b;
                    }
                }
                for ((o, ui), c) in out.iter_mut().zip(u.values()).zip(theta.block(dim + 1)) {
                    *o += I * *c * ui;
                }
                out
            }
            Model::BiHelmholtz(m) => {
                let theta_sq = m.squared(theta);
                let mut out = clamped_bilaplacian(&grid, u.values());
                let lap = grid.laplacian(u.values());
                for (((o, l), t), ui) in out.iter_mut().zip(lap).zip(theta_sq.block(0)).zip(u.values()) {
                    *o += ui - l * *t;
                }
                out
            }
        };
        Field::new(grid, values)
    }

    /// `B'_θ(θ, u) h`, the derivative of `D(θ)u` in direction `h`.
    pub fn apply_b(&self, theta: &ParamVector, u: &Field, h: &ParamVector) -> Result<Field> {
        self.check_param(theta)?;
        self.check_param(h)?;
        let grid = *self.grid();
        if u.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        let values = match self {
            Model::Abc(_) => {
                let dim = grid.dim();
                let mut out = diffusion_apply(&grid, h.block(0), u.values());
                for k in 0..dim {
                    let g = grid.central_difference(k, u.values());
                    for ((o, gi), b) in out.iter_mut().zip(g).zip(h.block(1 + k)) {
                        *o += gi * *b;
                    }
                }
                for ((o, ui), c) in out.iter_mut().zip(u.values()).zip(h.block(dim + 1)) {
                    *o += I * *c * ui;
                }
                out
            }
            Model::BiHelmholtz(m) => {
                let scale = m.chain_factor(theta);
                let lap = grid.laplacian(u.values());
                lap.iter()
                    .zip(h.block(0))
                    .zip(&scale)
                    .map(|((l, hv), s)| -*l * (*hv * *s))
                    .collect()
            }
        };
        Field::new(grid, values)
    }

    /// `B'_θ(θ, u)^⋆ w` as a complex dual direction (no real projection).
    pub fn apply_b_adjoint(&self, theta: &ParamVector, u: &Field, w: &Field) -> Result<DualDirection> {
        self.check_param(theta)?;
        let mut out = DualDirection::zeros(*self.grid(), self.n_blocks());
        self.accumulate_b_adjoint(theta, u.values(), w.values(), Complex64::new(1.0, 0.0), out.data_mut())?;
        Ok(out)
    }

    /// `acc += scale · B'_θ(θ, u)^⋆ w` on raw nodal slices.
    pub(crate) fn accumulate_b_adjoint(
        &self,
        theta: &ParamVector,
        u: &[Complex64],
        w: &[Complex64],
        scale: Complex64,
        acc: &mut [Complex64],
    ) -> Result<()> {
        let grid = *self.grid();
        let n = grid.n_total();
        ensure_len(n, u.len())?;
        ensure_len(n, w.len())?;
        ensure_len(n * self.n_blocks(), acc.len())?;
        match self {
            Model::Abc(_) => {
                let dim = grid.dim();
                // a-block: Pᵀ[conj(D⁺u) · D⁺w] summed over axes
                for k in 0..dim {
                    let du = grid.edge_gradient(k, u);
                    let dw = grid.edge_gradient(k, w);
                    let prod: Vec<Complex64> = du.iter().zip(&dw).map(|(a, b)| a.conj() * b).collect();
                    let nodal = grid.edge_average_transpose(k, &prod);
                    for (o, v) in acc[..n].iter_mut().zip(nodal) {
                        *o += scale * v;
                    }
                    // b_k-block: conj(G_k u) · w
                    let gu = grid.central_difference(k, u);
                    for ((o, g), wi) in acc[(1 + k) * n..(2 + k) * n].iter_mut().zip(gu).zip(w) {
                        *o += scale * g.conj() * wi;
                    }
                }
                // c-block: −i conj(u) · w
                for ((o, ui), wi) in acc[(dim + 1) * n..].iter_mut().zip(u).zip(w) {
                    *o += scale * (-I) * ui.conj() * wi;
                }
            }
            Model::BiHelmholtz(m) => {
                let factor = m.chain_factor(theta);
                let lap = grid.laplacian(u);
                for (((o, l), wi), f) in acc.iter_mut().zip(lap).zip(w).zip(factor) {
                    *o += scale * (-l.conj() * wi * f);
                }
            }
        }
        Ok(())
    }
}

impl BiHelmholtzModel {
    /// `θ = k²` for the wavenumber form, `θ` itself otherwise.
    fn squared(&self, theta: &ParamVector) -> ParamVector {
        match self.parameterization {
            BiHelmholtzParameterization::Squared => theta.clone(),
            BiHelmholtzParameterization::Wavenumber => {
                let data = theta.data().iter().map(|k| k * k).collect();
                ParamVector::from_data(*theta.grid(), data).expect("same shape")
            }
        }
    }

    /// Pointwise `dθ/dparam`: 1 or `2k`.
    fn chain_factor(&self, theta: &ParamVector) -> Vec<f64> {
        match self.parameterization {
            BiHelmholtzParameterization::Squared => vec![1.0; theta.data().len()],
            BiHelmholtzParameterization::Wavenumber => theta.data().iter().map(|k| 2.0 * k).collect(),
        }
    }
}

/// `−Σ_k div_k(P_k(a) · D⁺_k u)`
fn diffusion_apply(grid: &Grid, a: &[f64], u: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![ZERO; grid.n_total()];
    for k in 0..grid.dim() {
        let ae = grid.edge_average(k, a);
        let flux: Vec<Complex64> = grid.edge_gradient(k, u).iter().zip(&ae).map(|(g, c)| g * *c).collect();
        for (o, d) in out.iter_mut().zip(grid.edge_divergence(k, &flux)) {
            *o -= d;
        }
    }
    out
}

/// Row-major band width of a stencil reaching `reach` nodes along axis 0.
fn band_width(grid: &Grid, reach: usize) -> usize {
    reach * grid.stride(0)
}

fn abc_matrix(grid: &Grid, theta: &ParamVector) -> BandMatrix {
    let n = grid.n_per_axis();
    let dim = grid.dim();
    let bw = band_width(grid, 1);
    let mut m = BandMatrix::zeros(grid.n_total(), bw, bw);
    let a = theta.block(0);
    for k in 0..dim {
        let h = grid.spacing(k);
        let inv_h2 = 1.0 / (h * h);
        let ae = grid.edge_average(k, a);
        let stride = grid.stride(k);
        let edge_stride = n.pow((dim - 1 - k) as u32);
        let b = theta.block(1 + k);
        for i in 0..grid.n_total() {
            let mi = grid.multi_index(i);
            // edge index of the edge with axis coordinate `mi[k]` (left of node i)
            let mut e_left = 0;
            for ax in 0..dim {
                let len = if ax == k { n + 1 } else { n };
                e_left = e_left * len + mi[ax];
            }
            let e_right = e_left + edge_stride;
            let (al, ar) = (ae[e_left] * inv_h2, ae[e_right] * inv_h2);
            m.add(i, i, Complex64::new(al + ar, 0.0));
            let adv = b[i] * 0.5 / h;
            if mi[k] > 0 {
                m.add(i, i - stride, Complex64::new(-al - adv, 0.0));
            }
            if mi[k] + 1 < n {
                m.add(i, i + stride, Complex64::new(-ar + adv, 0.0));
            }
        }
    }
    for (i, c) in theta.block(dim + 1).iter().enumerate() {
        m.add(i, i, I * *c);
    }
    m
}

/// Continuous-form adjoint `−div(a∇·) − div(b·) − i·c·` assembled with the
/// same stencils. Since the central difference is skew and the diffusion
/// stencil symmetric, it coincides with the conjugate transpose of the forward
/// matrix; kept as an independent cross-check.
pub fn abc_adjoint_continuous_matrix(grid: &Grid, theta: &ParamVector) -> BandMatrix {
    let n = grid.n_per_axis();
    let dim = grid.dim();
    let bw = band_width(grid, 1);
    let mut m = BandMatrix::zeros(grid.n_total(), bw, bw);
    // diffusion part is symmetric: reuse the forward assembly with b = c = 0
    let mut diffusion_only = ParamVector::zeros(*grid, dim + 2);
    diffusion_only.block_mut(0).copy_from_slice(theta.block(0));
    let d = abc_matrix(grid, &diffusion_only);
    for i in 0..grid.n_total() {
        for j in d.row_span(i) {
            m.add(i, j, d.get(i, j));
        }
    }
    for k in 0..dim {
        let h = grid.spacing(k);
        let stride = grid.stride(k);
        let b = theta.block(1 + k);
        for i in 0..grid.n_total() {
            let mk = grid.multi_index(i)[k];
            // −(b_{i+1} Ψ_{i+1} − b_{i−1} Ψ_{i−1}) / 2h
            if mk + 1 < n {
                m.add(i, i + stride, Complex64::new(-b[i + stride] * 0.5 / h, 0.0));
            }
            if mk > 0 {
                m.add(i, i - stride, Complex64::new(b[i - stride] * 0.5 / h, 0.0));
            }
        }
    }
    for (i, c) in theta.block(dim + 1).iter().enumerate() {
        m.add(i, i, -I * *c);
    }
    m
}

/// Extended node grid: `n + 2` nodes per axis (interior plus both boundary
/// layers); `ext_of(i)` maps an interior node to its extended index.
struct Extended {
    dim: usize,
    len: usize,
    h: [f64; MAX_DIM],
}

impl Extended {
    fn new(grid: &Grid) -> Self {
        let mut h = [0.0; MAX_DIM];
        for (k, hk) in h.iter_mut().enumerate().take(grid.dim()) {
            *hk = grid.spacing(k);
        }
        Self { dim: grid.dim(), len: grid.n_per_axis() + 2, h }
    }

    fn total(&self) -> usize {
        self.len.pow(self.dim as u32)
    }

    fn stride(&self, axis: usize) -> usize {
        self.len.pow((self.dim - 1 - axis) as u32)
    }

    fn multi(&self, mut p: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for axis in (0..self.dim).rev() {
            out[axis] = p % self.len;
            p /= self.len;
        }
        out
    }

    fn ext_of(&self, grid: &Grid, i: usize) -> usize {
        let mi = grid.multi_index(i);
        (0..self.dim).fold(0, |acc, ax| acc * self.len + mi[ax] + 1)
    }

    /// Interior index of extended node `p`, if it is interior.
    fn interior_of(&self, grid: &Grid, p: usize) -> Option<usize> {
        let m = self.multi(p);
        let mut idx = 0;
        for &mk in m.iter().take(self.dim) {
            if mk == 0 || mk + 1 == self.len {
                return None;
            }
            idx = idx * grid.n_per_axis() + (mk - 1);
        }
        Some(idx)
    }

    /// 5-point Laplacian on the extended box with zeros outside it.
    fn laplacian(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; v.len()];
        for (p, o) in out.iter_mut().enumerate() {
            let m = self.multi(p);
            for ax in 0..self.dim {
                let s = self.stride(ax);
                let inv_h2 = 1.0 / (self.h[ax] * self.h[ax]);
                let left = if m[ax] > 0 { v[p - s] } else { ZERO };
                let right = if m[ax] + 1 < self.len { v[p + s] } else { ZERO };
                *o += (left - v[p] * 2.0 + right) * inv_h2;
            }
        }
        out
    }
}

/// `L_extᵀ L_ext u`: biharmonic with `u = 0` on the boundary layer and one
/// further layer of zeros (first-order clamped condition).
fn clamped_bilaplacian(grid: &Grid, u: &[Complex64]) -> Vec<Complex64> {
    let ext = Extended::new(grid);
    let mut big = vec![ZERO; ext.total()];
    for (i, ui) in u.iter().enumerate() {
        big[ext.ext_of(grid, i)] = *ui;
    }
    // The 5-point stencil is symmetric, so L_extᵀ is the same stencil
    // evaluated at interior nodes of the extended field.
    let lap = ext.laplacian(&big);
    let lap2 = ext.laplacian(&lap);
    (0..grid.n_total()).map(|i| lap2[ext.ext_of(grid, i)]).collect()
}

fn bihelmholtz_matrix(grid: &Grid, theta_sq: &ParamVector) -> BandMatrix {
    let ext = Extended::new(grid);
    let dim = grid.dim();
    let bw = band_width(grid, 2);
    let mut m = BandMatrix::zeros(grid.n_total(), bw, bw);
    // L_extᵀ L_ext: outer products of every extended row's interior stencil.
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * MAX_DIM + 1);
    for p in 0..ext.total() {
        row.clear();
        let mp = ext.multi(p);
        let mut diag = 0.0;
        for ax in 0..dim {
            let inv_h2 = 1.0 / (ext.h[ax] * ext.h[ax]);
            diag -= 2.0 * inv_h2;
            let s = ext.stride(ax);
            if mp[ax] > 0 {
                if let Some(i) = ext.interior_of(grid, p - s) {
                    row.push((i, inv_h2));
                }
            }
            if mp[ax] + 1 < ext.len {
                if let Some(i) = ext.interior_of(grid, p + s) {
                    row.push((i, inv_h2));
                }
            }
        }
        if let Some(i) = ext.interior_of(grid, p) {
            row.push((i, diag));
        }
        for &(i, ci) in &row {
            for &(j, cj) in &row {
                m.add(i, j, Complex64::new(ci * cj, 0.0));
            }
        }
    }
    // −θ·Δ + I with the Dirichlet 5-point Laplacian
    let t = theta_sq.block(0);
    for i in 0..grid.n_total() {
        let mut diag = 1.0;
        for ax in 0..dim {
            let inv_h2 = 1.0 / (grid.spacing(ax) * grid.spacing(ax));
            diag += 2.0 * inv_h2 * t[i];
            for off in [-1isize, 1] {
                if let Some(j) = grid.neighbor(i, ax, off) {
                    m.add(i, j, Complex64::new(-t[i] * inv_h2, 0.0));
                }
            }
        }
        m.add(i, i, Complex64::new(diag, 0.0));
    }
    m
}

/// `D(θ)` for the a,b,c-problem.
pub fn assemble_abc(params: &AbcParams, grid: &Grid, admissibility: Admissibility) -> Result<OperatorHandle> {
    let theta = params.to_vector()?;
    if theta.grid() != grid {
        return Err(Error::GridMismatch);
    }
    Model::abc(*grid, Admissibility { a_lower: params.a_lower, ..admissibility }).assemble(&theta)
}

/// `D(θ)^⋆` for the a,b,c-problem.
pub fn assemble_abc_adjoint(params: &AbcParams, grid: &Grid, admissibility: Admissibility) -> Result<OperatorHandle> {
    Ok(assemble_abc(params, grid, admissibility)?.adjoint())
}

/// `D(k)` for the bi-Helmholtz problem.
pub fn assemble_bihelmholtz(param: &BiHelmholtzParam, grid: &Grid) -> Result<OperatorHandle> {
    let theta = ParamVector::from_blocks(core::slice::from_ref(&param.k))?;
    if theta.grid() != grid {
        return Err(Error::GridMismatch);
    }
    Model::bihelmholtz(*grid, BiHelmholtzParameterization::Wavenumber).assemble(&theta)
}
