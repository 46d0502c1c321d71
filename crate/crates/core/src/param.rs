use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::error::{ensure_len, Error, Result};
use crate::grid::{Grid, RealField};

/// Real parameter (or parameter direction) stored as contiguous nodal blocks.
///
/// For the a,b,c-problem the blocks are `[a, b_0, .., b_{dim-1}, c]`; the
/// bi-Helmholtz problem has a single block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    grid: Grid,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(grid: Grid, blocks: usize) -> Self {
        Self { grid, data: vec![0.0; blocks * grid.n_total()] }
    }

    pub fn from_data(grid: Grid, data: Vec<f64>) -> Result<Self> {
        let n = grid.n_total();
        if data.is_empty() || data.len() % n != 0 {
            return Err(Error::DimensionMismatch { expected: n, found: data.len() });
        }
        Ok(Self { grid, data })
    }

    pub fn from_blocks(blocks: &[RealField]) -> Result<Self> {
        let grid = *blocks.first().ok_or(Error::DimensionMismatch { expected: 1, found: 0 })?.grid();
        let mut data = Vec::with_capacity(blocks.len() * grid.n_total());
        for b in blocks {
            if b.grid() != &grid {
                return Err(Error::GridMismatch);
            }
            data.extend_from_slice(b.values());
        }
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_blocks(&self) -> usize {
        self.data.len() / self.grid.n_total()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn block(&self, i: usize) -> &[f64] {
        let n = self.grid.n_total();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.grid.n_total();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn block_field(&self, i: usize) -> RealField {
        RealField::new(self.grid, self.block(i).to_vec()).expect("block length matches grid")
    }

    pub fn check_shape(&self, other: &ParamVector) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        ensure_len(self.data.len(), other.data.len())
    }

    /// `self += alpha · x`
    pub fn axpy(&mut self, alpha: f64, x: &ParamVector) -> Result<()> {
        self.check_shape(x)?;
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += alpha * v;
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> ParamVector {
        ParamVector { grid: self.grid, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// `self + alpha · x`
    pub fn plus(&self, alpha: f64, x: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.axpy(alpha, x)?;
        Ok(out)
    }

    /// `L²(Ω)` pairing summed over blocks.
    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>() * self.grid.weight())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum::<f64>() * self.grid.weight())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Complex dual direction produced by `B(u)^⋆ w` before the real projection.
#[derive(Debug, Clone, PartialEq)]
pub struct DualDirection {
    grid: Grid,
    data: Vec<Complex64>,
}

impl DualDirection {
    pub fn zeros(grid: Grid, blocks: usize) -> Self {
        Self { grid, data: vec![Complex64::new(0.0, 0.0); blocks * grid.n_total()] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_blocks(&self) -> usize {
        self.data.len() / self.grid.n_total()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn block(&self, i: usize) -> &[Complex64] {
        let n = self.grid.n_total();
        &self.data[i * n..(i + 1) * n]
    }

    /// Complex pairing `⟨h, g⟩ = h^dim Σ h_i conj(g_i)` with a real direction.
    pub fn pair(&self, h: &ParamVector) -> Result<Complex64> {
        ensure_len(self.data.len(), h.data().len())?;
        Ok(self
            .data
            .iter()
            .zip(h.data())
            .fold(Complex64::new(0.0, 0.0), |acc, (g, x)| acc + g.conj() * *x)
            * self.grid.weight())
    }

    pub fn real_part(&self) -> ParamVector {
        ParamVector { grid: self.grid, data: self.data.iter().map(|v| v.re).collect() }
    }
}
