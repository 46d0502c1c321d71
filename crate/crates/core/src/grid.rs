//! Uniform box grids, discrete stencils and the weighted pairings that stand in
//! for `L²(Ω)` and `L²(Ω×Ω)`.
//!
//! Only interior nodes are stored. Node `i` along an axis sits at `(i + 1)·h`
//! with `h = extent / (n + 1)`; the boundary nodes `0` and `L` carry implicit
//! homogeneous Dirichlet zeros. Node fields are laid out row-major over axes
//! (axis 0 slowest).
//!
//! Two first-order difference pairs are provided:
//!
//! * nodal central differences ([`Field::apply_gradient`] /
//!   [`Field::apply_divergence`]), used for advection terms;
//! * staggered edge differences ([`Grid::edge_gradient`] /
//!   [`Grid::edge_divergence`]), used for the conservative diffusion term.
//!   Axis `k` has `n + 1` edges per grid line, edge `m` joining nodes `m - 1`
//!   and `m`.
//!
//! In both pairs the divergence is the negative adjoint of the gradient under
//! the `h^dim`-weighted pairing, so summation by parts holds to rounding.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::error::{ensure_len, invalid, Error, Result};

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    extent: [f64; MAX_DIM],
    h: [f64; MAX_DIM],
}

impl Grid {
    /// `extent` holds either one value per axis or a single value used for all axes.
    pub fn new(dim: usize, n_per_axis: usize, extent: &[f64]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(invalid("grid dimension must be 1, 2 or 3"));
        }
        if n_per_axis < 3 {
            return Err(invalid("a grid needs at least 3 interior nodes per axis"));
        }
        if extent.len() != dim && extent.len() != 1 {
            return Err(Error::DimensionMismatch { expected: dim, found: extent.len() });
        }
        let mut ext = [0.0; MAX_DIM];
        let mut h = [0.0; MAX_DIM];
        for axis in 0..dim {
            let e = if extent.len() == 1 { extent[0] } else { extent[axis] };
            if !(e.is_finite() && e > 0.0) {
                return Err(invalid("grid extent must be positive and finite"));
            }
            ext[axis] = e;
            h[axis] = e / (n_per_axis as f64 + 1.0);
        }
        Ok(Self { dim, n: n_per_axis, extent: ext, h })
    }

    pub fn uniform(dim: usize, n_per_axis: usize, extent: f64) -> Result<Self> {
        Self::new(dim, n_per_axis, &[extent])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    pub fn n_total(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extent[axis]
    }

    pub fn extents(&self) -> &[f64] {
        &self.extent[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn max_extent(&self) -> f64 {
        self.extents().iter().copied().fold(0.0, f64::max)
    }

    /// Quadrature weight of every node (midpoint rule), `Π h_axis`.
    pub fn weight(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }

    /// Linear stride of `axis` in the node layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn multi_index(&self, mut index: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for axis in (0..self.dim).rev() {
            out[axis] = index % self.n;
            index /= self.n;
        }
        out
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Physical coordinates of node `index`; unused axes are zero.
    pub fn coords(&self, index: usize) -> [f64; MAX_DIM] {
        let m = self.multi_index(index);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = (m[axis] as f64 + 1.0) * self.h[axis];
        }
        x
    }

    /// Neighbour of `index` shifted by `offset` along `axis`, or `None` when the
    /// shift lands on (or beyond) the boundary.
    pub fn neighbor(&self, index: usize, axis: usize, offset: isize) -> Option<usize> {
        let m = self.multi_index(index)[axis] as isize + offset;
        if m < 0 || m >= self.n as isize {
            return None;
        }
        let stride = self.stride(axis) as isize;
        Some((index as isize + offset * stride) as usize)
    }

    pub fn edge_count(&self, axis: usize) -> usize {
        debug_assert!(axis < self.dim);
        (self.n + 1) * self.n.pow((self.dim - 1) as u32)
    }

    /// Calls `f(node_base, edge_base)` for every grid line parallel to `axis`.
    /// Nodes on the line are `node_base + m·stride(axis)` (`m < n`); edges are
    /// `edge_base + m·edge_stride` (`m ≤ n`).
    fn for_each_line(&self, axis: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let lines = self.n.pow((self.dim - 1) as u32);
        let node_stride = self.stride(axis);
        // Edge layout replaces axis extent n by n + 1.
        let edge_stride = self.n.pow((self.dim - 1 - axis) as u32);
        for line in 0..lines {
            // Decompose `line` into the indices of the other axes, row-major.
            let mut rest = line;
            let mut other = [0usize; MAX_DIM];
            for ax in (0..self.dim).rev() {
                if ax == axis {
                    continue;
                }
                other[ax] = rest % self.n;
                rest /= self.n;
            }
            let mut node_base = 0;
            let mut edge_base = 0;
            for ax in 0..self.dim {
                let len = if ax == axis { self.n + 1 } else { self.n };
                node_base = node_base * self.n + if ax == axis { 0 } else { other[ax] };
                edge_base = edge_base * len + if ax == axis { 0 } else { other[ax] };
            }
            f(node_base, node_stride, edge_base, edge_stride);
        }
    }

    /// Forward difference onto the edges of `axis`: `(u_m − u_{m−1}) / h`.
    pub fn edge_gradient(&self, axis: usize, u: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.edge_count(axis)];
        let inv_h = 1.0 / self.h[axis];
        let n = self.n;
        self.for_each_line(axis, |nb, ns, eb, es| {
            for m in 0..=n {
                let right = if m < n { u[nb + m * ns] } else { Complex64::new(0.0, 0.0) };
                let left = if m > 0 { u[nb + (m - 1) * ns] } else { Complex64::new(0.0, 0.0) };
                out[eb + m * es] = (right - left) * inv_h;
            }
        });
        out
    }

    /// Backward difference from the edges of `axis` to nodes: `(v_{i+1} − v_i) / h`;
    /// the negative adjoint of [`Grid::edge_gradient`].
    pub fn edge_divergence(&self, axis: usize, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_total()];
        let inv_h = 1.0 / self.h[axis];
        let n = self.n;
        self.for_each_line(axis, |nb, ns, eb, es| {
            for i in 0..n {
                out[nb + i * ns] = (v[eb + (i + 1) * es] - v[eb + i * es]) * inv_h;
            }
        });
        out
    }

    /// Interpolates a nodal coefficient onto the edges of `axis`: the mean of
    /// the two adjacent nodes, or the single interior neighbour on boundary edges.
    pub fn edge_average(&self, axis: usize, a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.edge_count(axis)];
        let n = self.n;
        self.for_each_line(axis, |nb, ns, eb, es| {
            out[eb] = a[nb];
            out[eb + n * es] = a[nb + (n - 1) * ns];
            for m in 1..n {
                out[eb + m * es] = 0.5 * (a[nb + (m - 1) * ns] + a[nb + m * ns]);
            }
        });
        out
    }

    /// Transpose of [`Grid::edge_average`] (edge values scattered back to nodes).
    pub fn edge_average_transpose(&self, axis: usize, e: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_total()];
        let n = self.n;
        self.for_each_line(axis, |nb, ns, eb, es| {
            out[nb] += e[eb];
            out[nb + (n - 1) * ns] += e[eb + n * es];
            for m in 1..n {
                let half = e[eb + m * es] * 0.5;
                out[nb + (m - 1) * ns] += half;
                out[nb + m * ns] += half;
            }
        });
        out
    }

    /// Central difference along `axis` with Dirichlet zeros outside,
    /// `(u_{i+1} − u_{i−1}) / 2h`. The matrix is skew-symmetric.
    pub fn central_difference(&self, axis: usize, u: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_total()];
        let inv_2h = 0.5 / self.h[axis];
        let n = self.n;
        self.for_each_line(axis, |nb, ns, _, _| {
            for i in 0..n {
                let right = if i + 1 < n { u[nb + (i + 1) * ns] } else { Complex64::new(0.0, 0.0) };
                let left = if i > 0 { u[nb + (i - 1) * ns] } else { Complex64::new(0.0, 0.0) };
                out[nb + i * ns] = (right - left) * inv_2h;
            }
        });
        out
    }

    /// Classical `2·dim + 1` point Laplacian with Dirichlet zeros outside.
    pub fn laplacian(&self, u: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_total()];
        let n = self.n;
        for axis in 0..self.dim {
            let inv_h2 = 1.0 / (self.h[axis] * self.h[axis]);
            self.for_each_line(axis, |nb, ns, _, _| {
                for i in 0..n {
                    let right = if i + 1 < n { u[nb + (i + 1) * ns] } else { Complex64::new(0.0, 0.0) };
                    let left = if i > 0 { u[nb + (i - 1) * ns] } else { Complex64::new(0.0, 0.0) };
                    out[nb + i * ns] += (right - u[nb + i * ns] * 2.0 + left) * inv_h2;
                }
            });
        }
        out
    }
}

/// Complex-valued function on the interior nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        ensure_len(grid.n_total(), values.len())?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![Complex64::new(0.0, 0.0); grid.n_total()] }
    }

    /// Samples `f` at the node coordinates (slice of length `dim`).
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.n_total())
            .map(|i| f(&grid.coords(i)[..grid.dim()]))
            .collect();
        Self { grid, values }
    }

    pub fn from_real(field: &RealField) -> Self {
        Self {
            grid: field.grid,
            values: field.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    fn check_grid(&self, other: &Grid) -> Result<()> {
        if &self.grid == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Discrete `L²(Ω)` pairing `h^dim Σ f_i conj(g_i)`.
    pub fn inner_product(&self, other: &Field) -> Result<Complex64> {
        self.check_grid(&other.grid)?;
        Ok(dot(&self.values, &other.values) * self.grid.weight())
    }

    /// `Re (f, g)`: the real pairing on complex fields.
    pub fn real_inner_product(&self, other: &Field) -> Result<f64> {
        Ok(self.inner_product(other)?.re)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.weight())
    }

    pub fn scaled(&self, s: Complex64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| v * s).collect() }
    }

    pub fn apply_laplacian(&self) -> Field {
        Field { grid: self.grid, values: self.grid.laplacian(&self.values) }
    }

    /// Central-difference gradient, one field per axis.
    pub fn apply_gradient(&self) -> Vec<Field> {
        (0..self.grid.dim())
            .map(|axis| Field { grid: self.grid, values: self.grid.central_difference(axis, &self.values) })
            .collect()
    }

    /// Divergence of a per-axis vector field; the negative adjoint of
    /// [`Field::apply_gradient`]. The central stencil is skew, so this is again
    /// the central difference.
    pub fn apply_divergence(v: &[Field]) -> Result<Field> {
        let first = v.first().ok_or_else(|| invalid("divergence of an empty vector field"))?;
        let grid = first.grid;
        ensure_len(grid.dim(), v.len())?;
        let mut out = vec![Complex64::new(0.0, 0.0); grid.n_total()];
        for (axis, comp) in v.iter().enumerate() {
            comp.check_grid(&grid)?;
            // −Gᵀ = G for the skew central stencil.
            for (o, d) in out.iter_mut().zip(grid.central_difference(axis, &comp.values)) {
                *o += d;
            }
        }
        Ok(Field { grid, values: out })
    }
}

/// Real-valued function on the interior nodes (parameter fields).
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        ensure_len(grid.n_total(), values.len())?;
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.n_total()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.n_total()).map(|i| f(&grid.coords(i)[..grid.dim()])).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn inner_product(&self, other: &RealField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.weight()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.inner_product(self))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }
}

/// Unweighted `Σ a_i conj(b_i)`.
pub(crate) fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x * y.conj())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::{random_field, rng};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn grid1(n: usize) -> Grid {
        Grid::uniform(1, n, 1.0).unwrap()
    }

    #[test]
    fn constant_inner_product_is_weight_sum() {
        let g = grid1(3);
        let one = Field::from_fn(g, |_| c(1.0));
        let ip = one.inner_product(&one).unwrap();
        assert!((ip.re - 0.75).abs() < 1e-15 && ip.im == 0.0);
    }

    #[test]
    fn inner_product_is_sesquilinear_and_conjugate_symmetric() {
        let g = Grid::uniform(2, 5, 1.0).unwrap();
        let mut r = rng(0);
        let f = random_field(&g, &mut r);
        let gg = random_field(&g, &mut r);
        let fg = f.inner_product(&gg).unwrap();
        let gf = gg.inner_product(&f).unwrap();
        assert_eq!(fg, gf.conj());

        let i_g = gg.scaled(Complex64::i());
        let lhs = i_g.inner_product(&gg).unwrap();
        let norm2 = gg.norm() * gg.norm();
        assert!((lhs - Complex64::new(0.0, norm2)).norm() < 1e-13 * norm2);

        // scalar loop oracle
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..g.n_total() {
            acc += f.values()[i] * gg.values()[i].conj() * g.weight();
        }
        assert!((acc - fg).norm() < 1e-13 * acc.norm());
        assert!((f.real_inner_product(&gg).unwrap() - acc.re).abs() < 1e-13 * acc.norm());
    }

    #[test]
    fn real_pairing_of_real_and_imaginary_fields_vanishes() {
        let g = grid1(7);
        let mut r = rng(1);
        let f = random_field(&g, &mut r);
        let re = Field::new(g, f.values().iter().map(|v| c(v.re)).collect()).unwrap();
        let im = Field::new(g, f.values().iter().map(|v| Complex64::new(0.0, v.im)).collect()).unwrap();
        assert_eq!(re.real_inner_product(&im).unwrap(), 0.0);
        assert!(f.real_inner_product(&f).unwrap() >= 0.0);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = Field::zeros(grid1(3));
        let b = Field::zeros(grid1(4));
        assert_eq!(a.inner_product(&b), Err(Error::GridMismatch));
    }

    #[test]
    fn laplacian_of_constant_sees_boundary_zeros() {
        let g = grid1(3);
        let u = Field::from_fn(g, |_| c(1.0)).apply_laplacian();
        let expect = [-16.0, 0.0, -16.0];
        for (v, e) in u.values().iter().zip(expect) {
            assert!((v.re - e).abs() < 1e-12 && v.im == 0.0);
        }
    }

    #[test]
    fn laplacian_is_exact_on_quadratics() {
        let g = grid1(9);
        let u = Field::from_fn(g, |x| c(x[0] * (1.0 - x[0]))).apply_laplacian();
        for v in u.values() {
            assert!((v.re + 2.0).abs() < 1e-11, "{v}");
        }
    }

    /// Dense matrix of a linear nodal map, built column by column.
    fn dense(n: usize, f: impl Fn(&[Complex64]) -> Vec<Complex64>) -> Vec<Vec<Complex64>> {
        (0..n)
            .map(|j| {
                let mut e = vec![c(0.0); n];
                e[j] = c(1.0);
                f(&e)
            })
            .collect()
    }

    #[test]
    fn laplacian_matches_kronecker_sum() {
        let g = Grid::uniform(2, 4, 1.0).unwrap();
        let n = 4;
        let h2 = g.spacing(0) * g.spacing(0);
        // 1D second-difference matrix
        let t = |i: usize, j: usize| -> f64 {
            if i == j {
                -2.0 / h2
            } else if i.abs_diff(j) == 1 {
                1.0 / h2
            } else {
                0.0
            }
        };
        let cols = dense(16, |e| g.laplacian(e));
        for (col, column) in cols.iter().enumerate() {
            let (cj, ck) = (col / n, col % n);
            for row in 0..16 {
                let (rj, rk) = (row / n, row % n);
                let expect = t(rj, cj) * f64::from(u8::from(rk == ck)) + f64::from(u8::from(rj == cj)) * t(rk, ck);
                assert!((column[row].re - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradient_exact_on_linear_ramp() {
        let g = Grid::uniform(2, 6, 2.0).unwrap();
        let u = Field::from_fn(g, |x| c(3.0 * x[0] - 0.5 * x[1]));
        let grad = u.apply_gradient();
        for i in 0..g.n_total() {
            let m = g.multi_index(i);
            if (1..5).contains(&m[0]) {
                assert!((grad[0].values()[i].re - 3.0).abs() < 1e-12);
            }
            if (1..5).contains(&m[1]) {
                assert!((grad[1].values()[i].re + 0.5).abs() < 1e-12);
            }
        }
        let flat = Field::from_fn(g, |_| c(2.0)).apply_gradient();
        for i in 0..g.n_total() {
            let m = g.multi_index(i);
            if (1..5).contains(&m[0]) {
                assert_eq!(flat[0].values()[i], c(0.0));
            } else {
                assert!(flat[0].values()[i].norm() > 0.0);
            }
        }
    }

    #[test]
    fn gradient_matches_difference_matrix() {
        let g = grid1(6);
        let mut r = rng(3);
        let u = random_field(&g, &mut r);
        let h = g.spacing(0);
        let grad = &u.apply_gradient()[0];
        for i in 0..6 {
            let mut expect = c(0.0);
            for j in 0..6 {
                let d = if j == i + 1 {
                    0.5 / h
                } else if j + 1 == i {
                    -0.5 / h
                } else {
                    0.0
                };
                expect += u.values()[j] * d;
            }
            assert!((grad.values()[i] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn divergence_of_zero_and_constant() {
        let g = grid1(5);
        let z = Field::apply_divergence(&[Field::zeros(g)]).unwrap();
        assert!(z.values().iter().all(|v| *v == c(0.0)));
        let d = Field::apply_divergence(&[Field::from_fn(g, |_| c(1.0))]).unwrap();
        let h = g.spacing(0);
        for (i, v) in d.values().iter().enumerate() {
            let expect = match i {
                0 => 0.5 / h,
                4 => -0.5 / h,
                _ => 0.0,
            };
            assert!((v.re - expect).abs() < 1e-12);
        }
        assert!(matches!(
            Field::apply_divergence(&[Field::zeros(g), Field::zeros(g)]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn divergence_matches_negative_transpose_oracle() {
        let g = Grid::uniform(2, 4, 1.0).unwrap();
        let mut r = rng(4);
        let v: Vec<Field> = (0..2).map(|_| random_field(&g, &mut r)).collect();
        let div = Field::apply_divergence(&v).unwrap();
        // oracle: −Gᵀ v assembled from dense gradient columns
        let n = g.n_total();
        for i in 0..n {
            let mut e = vec![c(0.0); n];
            e[i] = c(1.0);
            let mut expect = c(0.0);
            for axis in 0..2 {
                let col = g.central_difference(axis, &e);
                // (−Gᵀ v)_i = −Σ_j G_{j i} v_j
                for j in 0..n {
                    expect -= col[j] * v[axis].values()[j];
                }
            }
            assert!((div.values()[i] - expect).norm() < 1e-11);
        }
    }

    #[test]
    fn summation_by_parts_holds_for_both_pairs() {
        let g = Grid::new(2, 7, &[1.0, 1.5]).unwrap();
        let mut r = rng(5);
        let u = random_field(&g, &mut r);
        let v: Vec<Field> = (0..2).map(|_| random_field(&g, &mut r)).collect();
        let lhs = Field::apply_divergence(&v).unwrap().inner_product(&u).unwrap();
        let grad = u.apply_gradient();
        let rhs: Complex64 = -(0..2).map(|k| v[k].inner_product(&grad[k]).unwrap()).sum::<Complex64>();
        assert!((lhs - rhs).norm() <= 1e-13 * lhs.norm().max(1.0));

        for axis in 0..2 {
            let ev: Vec<Complex64> = (0..g.edge_count(axis))
                .map(|i| Complex64::new(libm::sin(i as f64), libm::cos(3.0 * i as f64)))
                .collect();
            let w = g.weight();
            let lhs = dot(&g.edge_divergence(axis, &ev), u.values()) * w;
            let rhs = -dot(&ev, &g.edge_gradient(axis, u.values())) * w;
            assert!((lhs - rhs).norm() <= 1e-13 * lhs.norm().max(1.0));
        }
    }

    #[test]
    fn staggered_composition_is_the_classical_laplacian() {
        let g = Grid::new(2, 6, &[1.0, 0.7]).unwrap();
        let mut r = rng(6);
        let u = random_field(&g, &mut r);
        let mut comp = vec![c(0.0); g.n_total()];
        for axis in 0..2 {
            let d = g.edge_divergence(axis, &g.edge_gradient(axis, u.values()));
            for (o, x) in comp.iter_mut().zip(d) {
                *o += x;
            }
        }
        let lap = u.apply_laplacian();
        let scale = lap.values().iter().fold(0.0f64, |m, v| m.max(v.norm()));
        for (a, b) in comp.iter().zip(lap.values()) {
            assert!((a - b).norm() <= 1e-13 * scale);
        }
    }

    #[test]
    fn edge_average_transpose_is_adjoint() {
        let g = Grid::uniform(2, 5, 1.0).unwrap();
        let a: Vec<f64> = (0..g.n_total()).map(|i| libm::sin(0.3 * i as f64)).collect();
        for axis in 0..2 {
            let e: Vec<Complex64> = (0..g.edge_count(axis)).map(|i| Complex64::new(i as f64, 1.0)).collect();
            let pa = g.edge_average(axis, &a);
            let lhs: Complex64 = pa.iter().zip(&e).map(|(x, y)| y * *x).sum();
            let pte = g.edge_average_transpose(axis, &e);
            let rhs: Complex64 = a.iter().zip(&pte).map(|(x, y)| y * *x).sum();
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn index_round_trip_and_neighbors() {
        let g = Grid::uniform(2, 5, 1.0).unwrap();
        for i in 0..g.n_total() {
            assert_eq!(g.linear_index(&g.multi_index(i)), i);
        }
        assert_eq!(g.neighbor(0, 0, -1), None);
        assert_eq!(g.neighbor(0, 0, 1), Some(5));
        assert_eq!(g.neighbor(4, 1, 1), None);
        assert!(Grid::uniform(1, 2, 1.0).is_err());
        assert!(Grid::uniform(4, 5, 1.0).is_err());
        assert!(Grid::uniform(2, 5, -1.0).is_err());
    }
}
