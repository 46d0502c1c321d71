//! Gaussian source models, ensemble sampling and covariance kernels.
//!
//! A [`CovKernel`] stores the nodal values `K(x, x')` of a two-point function
//! on `Ω×Ω`. It acts on fields by `(K y)(x) = h^dim Σ_{x'} K(x, x') y(x')`,
//! and the data-space norm is `‖K‖_𝒴 = h^dim · ‖K‖_F`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure_len, invalid, Error, Result};
use crate::exec::Executor;
use crate::grid::{Field, Grid};
use crate::model::OperatorHandle;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Default tolerance for the Hermitian check, relative to the largest entry.
pub const HERMITIAN_TOL: f64 = 1e-13;
/// Default PSD tolerance: eigenvalues must be at least `−PSD_TOL · trace`.
pub const PSD_TOL: f64 = 1e-12;

/// Dense two-point kernel on `Ω×Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovKernel {
    grid: Grid,
    values: DMatrix<Complex64>,
    hermitian: bool,
}

impl CovKernel {
    pub fn new(grid: Grid, values: DMatrix<Complex64>, hermitian: bool) -> Result<Self> {
        let n = grid.n_total();
        ensure_len(n, values.nrows())?;
        ensure_len(n, values.ncols())?;
        Ok(Self { grid, values, hermitian })
    }

    pub fn zeros(grid: Grid, hermitian: bool) -> Self {
        let n = grid.n_total();
        Self { grid, values: DMatrix::zeros(n, n), hermitian }
    }

    /// Row-major values, as in the on-disk layout.
    pub fn from_row_major(grid: Grid, data: &[Complex64], hermitian: bool) -> Result<Self> {
        let n = grid.n_total();
        ensure_len(n * n, data.len())?;
        Self::new(grid, DMatrix::from_row_slice(n, n, data), hermitian)
    }

    pub fn to_row_major(&self) -> Vec<Complex64> {
        self.values.transpose().as_slice().to_vec()
    }

    /// `Σ_i a_i conj(b_i)ᵀ`, flagged Hermitian only if the caller says so.
    pub fn from_outer_products(grid: Grid, pairs: &[(Field, Field)], hermitian: bool) -> Result<Self> {
        let n = grid.n_total();
        let mut values = DMatrix::zeros(n, n);
        for (a, b) in pairs {
            if a.grid() != &grid || b.grid() != &grid {
                return Err(Error::GridMismatch);
            }
            for (col, bv) in b.values().iter().enumerate() {
                let bc = bv.conj();
                for (row, av) in a.values().iter().enumerate() {
                    values[(row, col)] += av * bc;
                }
            }
        }
        Self::new(grid, values, hermitian)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<Complex64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<Complex64> {
        &mut self.values
    }

    pub fn into_values(self) -> DMatrix<Complex64> {
        self.values
    }

    pub fn hermitian_flag(&self) -> bool {
        self.hermitian
    }

    pub fn set_hermitian_flag(&mut self, flag: bool) {
        self.hermitian = flag;
    }

    /// Contiguous column `x'`, i.e. the field `K(·, x')`.
    pub fn column(&self, col: usize) -> &[Complex64] {
        let n = self.grid.n_total();
        &self.values.as_slice()[col * n..(col + 1) * n]
    }

    pub fn column_field(&self, col: usize) -> Field {
        Field::new(self.grid, self.column(col).to_vec()).expect("column length matches grid")
    }

    /// `max |K − Kᴴ| / max |K|` (zero for the zero kernel).
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.values.nrows();
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..=j {
                worst = worst.max((self.values[(i, j)] - self.values[(j, i)].conj()).norm());
            }
        }
        worst / scale
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = hermitian_part(&self.values);
        let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn trace(&self) -> Complex64 {
        self.values.trace()
    }

    /// Numerical PSD test: smallest eigenvalue `≥ −tol · max(trace, |λ|_max)`.
    pub fn is_numerically_psd(&self, tol: f64) -> bool {
        let ev = self.eigenvalues();
        let Some(&min) = ev.first() else { return true };
        let scale = self.trace().re.abs().max(ev.last().map_or(0.0, |v| v.abs()));
        min >= -tol * scale
    }

    /// Hermitian at [`HERMITIAN_TOL`] and PSD at [`PSD_TOL`].
    pub fn is_covariance(&self) -> bool {
        self.is_hermitian(HERMITIAN_TOL) && self.is_numerically_psd(PSD_TOL)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| f64::max(m, v.norm()))
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v.norm_sqr()).sum())
    }

    /// `‖K‖_𝒴 = h^dim ‖K‖_F`
    pub fn norm(&self) -> f64 {
        self.grid.weight() * self.frobenius()
    }

    /// `⟨K, L⟩_𝒴 = h^(2·dim) Σ K conj(L)`
    pub fn inner_product(&self, other: &CovKernel) -> Result<Complex64> {
        self.check_same(other)?;
        let w = self.grid.weight();
        let s = self.values.iter().zip(other.values.iter()).fold(ZERO, |acc, (a, b)| acc + a * b.conj());
        Ok(s * (w * w))
    }

    /// `‖K − L‖_F / ‖L‖_F`
    pub fn relative_difference(&self, reference: &CovKernel) -> Result<f64> {
        self.check_same(reference)?;
        let num: f64 = self.values.iter().zip(reference.values.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den = reference.frobenius();
        Ok(if den == 0.0 { libm::sqrt(num) } else { libm::sqrt(num) / den })
    }

    pub fn sub(&self, other: &CovKernel) -> Result<CovKernel> {
        self.check_same(other)?;
        Ok(CovKernel {
            grid: self.grid,
            values: &self.values - &other.values,
            hermitian: self.hermitian && other.hermitian,
        })
    }

    pub fn add(&self, other: &CovKernel) -> Result<CovKernel> {
        self.check_same(other)?;
        Ok(CovKernel {
            grid: self.grid,
            values: &self.values + &other.values,
            hermitian: self.hermitian && other.hermitian,
        })
    }

    pub fn scaled(&self, s: f64) -> CovKernel {
        CovKernel { grid: self.grid, values: self.values.map(|v| v * s), hermitian: self.hermitian }
    }

    pub fn conj_transpose(&self) -> CovKernel {
        CovKernel { grid: self.grid, values: self.values.adjoint(), hermitian: self.hermitian }
    }

    /// Replaces the values by `(K + Kᴴ)/2` and sets the Hermitian flag.
    pub fn symmetrize(&mut self) {
        symmetrize_in_place(&mut self.values);
        self.hermitian = true;
    }

    /// `(K y)(x) = h^dim Σ_{x'} K(x, x') y(x')`
    pub fn apply(&self, y: &Field) -> Result<Field> {
        if y.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let v = nalgebra::DVector::from_column_slice(y.values());
        let out = &self.values * v * Complex64::new(self.grid.weight(), 0.0);
        Field::new(self.grid, out.as_slice().to_vec())
    }

    fn check_same(&self, other: &CovKernel) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

fn hermitian_part(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let mut h = m.clone();
    symmetrize_in_place(&mut h);
    h
}

fn symmetrize_in_place(m: &mut DMatrix<Complex64>) {
    let n = m.nrows();
    for j in 0..n {
        m[(j, j)] = Complex64::new(m[(j, j)].re, 0.0);
        for i in 0..j {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Source covariance `Π_f` with a square-root factor `Π_f = R Rᴴ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCovariance {
    kernel: CovKernel,
    factor: DMatrix<Complex64>,
}

impl SourceCovariance {
    /// Discrete white noise: `σ² / h^dim` on the diagonal.
    pub fn white(grid: Grid, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid("sigma must be positive"));
        }
        let n = grid.n_total();
        let var = sigma * sigma / grid.weight();
        let kernel = DMatrix::from_diagonal_element(n, n, Complex64::new(var, 0.0));
        let factor = DMatrix::from_diagonal_element(n, n, Complex64::new(libm::sqrt(var), 0.0));
        Ok(Self { kernel: CovKernel::new(grid, kernel, true)?, factor })
    }

    /// Squared-exponential kernel `σ² exp(−|x − x'|² / 2ℓ²)`.
    pub fn squared_exponential(grid: Grid, sigma: f64, ell: f64) -> Result<Self> {
        if !(sigma > 0.0 && ell > 0.0) {
            return Err(invalid("sigma and ell must be positive"));
        }
        let n = grid.n_total();
        let coords: Vec<_> = (0..n).map(|i| grid.coords(i)).collect();
        let s2 = sigma * sigma;
        let values = DMatrix::from_fn(n, n, |i, j| {
            let d2: f64 = coords[i].iter().zip(&coords[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            Complex64::new(s2 * libm::exp(-d2 / (2.0 * ell * ell)), 0.0)
        });
        Self::from_kernel(CovKernel::new(grid, values, true)?)
    }

    /// Factorizes a Hermitian kernel via its eigendecomposition. Negative
    /// eigenvalues are clipped to zero; if any were negative the kernel is
    /// replaced by its clipped reconstruction.
    pub fn from_kernel(kernel: CovKernel) -> Result<Self> {
        if !kernel.is_hermitian(HERMITIAN_TOL) {
            return Err(invalid("source covariance must be Hermitian"));
        }
        let grid = *kernel.grid();
        let n = grid.n_total();
        let eig = SymmetricEigen::new(hermitian_part(kernel.values()));
        let lmax = eig.eigenvalues.iter().fold(0.0, |m: f64, v| m.max(*v));
        let clipped = eig.eigenvalues.iter().any(|&v| v < 0.0);
        let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-14 * lmax).collect();
        let mut factor = DMatrix::zeros(n, keep.len().max(1));
        for (c, &i) in keep.iter().enumerate() {
            let s = libm::sqrt(eig.eigenvalues[i]);
            for r in 0..n {
                factor[(r, c)] = eig.eigenvectors[(r, i)] * s;
            }
        }
        let kernel = if clipped {
            let mut k = CovKernel::new(grid, &factor * factor.adjoint(), true)?;
            k.symmetrize();
            k
        } else {
            let mut k = kernel;
            k.symmetrize();
            k
        };
        Ok(Self { kernel, factor })
    }

    pub fn grid(&self) -> &Grid {
        self.kernel.grid()
    }

    pub fn kernel(&self) -> &CovKernel {
        &self.kernel
    }

    /// `R` with `Π_f = R Rᴴ`; `n_total × rank`.
    pub fn factor(&self) -> &DMatrix<Complex64> {
        &self.factor
    }
}

/// `J` source realizations drawn from a [`SourceCovariance`].
#[derive(Debug, Clone, PartialEq)]
pub struct SourceEnsemble {
    samples: Vec<Field>,
    seed: u64,
}

impl SourceEnsemble {
    pub fn new(samples: Vec<Field>, seed: u64) -> Result<Self> {
        let grid = *samples.first().ok_or(Error::EmptyEnsemble)?.grid();
        if samples.iter().any(|s| s.grid() != &grid) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { samples, seed })
    }

    pub fn samples(&self) -> &[Field] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> &Grid {
        self.samples[0].grid()
    }

    /// Multiplies every sample by `s`.
    pub fn scaled(&self, s: f64) -> SourceEnsemble {
        let samples = self.samples.iter().map(|f| f.scaled(Complex64::new(s, 0.0))).collect();
        SourceEnsemble { samples, seed: self.seed }
    }
}

/// Generator for sample `j` of a run seeded with `seed`: ChaCha8 keyed by
/// `seed` on stream `j`, so each sample is reproducible on its own.
pub fn sample_rng(seed: u64, j: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j);
    rng
}

/// Circularly-symmetric complex normal vector with `E|z_i|² = 1`.
pub fn complex_normal(rng: &mut ChaCha8Rng, len: usize) -> Vec<Complex64> {
    let normal = Normal::new(0.0, core::f64::consts::FRAC_1_SQRT_2).expect("valid deviation");
    (0..len).map(|_| Complex64::new(normal.sample(rng), normal.sample(rng))).collect()
}

/// Draws `f_j = R z_j`, `j = 0..count`, with `z_j` from [`complex_normal`].
pub fn sample_ensemble(cov: &SourceCovariance, count: usize, seed: u64) -> Result<SourceEnsemble> {
    if count == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let grid = *cov.grid();
    let r = cov.factor();
    let samples = (0..count)
        .map(|j| {
            let z = nalgebra::DVector::from_vec(complex_normal(&mut sample_rng(seed, j as u64), r.ncols()));
            Field::new(grid, (r * z).as_slice().to_vec()).expect("factor rows match grid")
        })
        .collect();
    SourceEnsemble::new(samples, seed)
}

/// `(1/J) Σ_j u_j(x) conj(u_j(x'))`, exactly Hermitian by construction.
pub fn sample_covariance(states: &[Field]) -> Result<CovKernel> {
    let grid = *states.first().ok_or(Error::EmptyEnsemble)?.grid();
    if states.iter().any(|s| s.grid() != &grid) {
        return Err(Error::GridMismatch);
    }
    let n = grid.n_total();
    let inv_j = 1.0 / states.len() as f64;
    let mut values = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let mut acc = ZERO;
            for s in states {
                let v = s.values();
                acc += v[i] * v[j].conj();
            }
            acc *= inv_j;
            if i == j {
                values[(i, i)] = Complex64::new(acc.re, 0.0);
            } else {
                values[(i, j)] = acc;
                values[(j, i)] = acc.conj();
            }
        }
    }
    CovKernel::new(grid, values, true)
}

/// Mixed sample covariance `(1/J) Σ_j a_j conj(b_j)ᵀ`.
pub fn mixed_covariance(a: &[Field], b: &[Field]) -> Result<CovKernel> {
    ensure_len(a.len(), b.len())?;
    let grid = *a.first().ok_or(Error::EmptyEnsemble)?.grid();
    let n = grid.n_total();
    let inv_j = 1.0 / a.len() as f64;
    let mut values = DMatrix::zeros(n, n);
    for (aj, bj) in a.iter().zip(b) {
        if aj.grid() != &grid || bj.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        for (col, bv) in bj.values().iter().enumerate() {
            let bc = bv.conj() * inv_j;
            for (row, av) in aj.values().iter().enumerate() {
                values[(row, col)] += av * bc;
            }
        }
    }
    CovKernel::new(grid, values, false)
}

/// Solves `op x = column` for every column of `m` in place.
pub(crate) fn solve_columns(op: &OperatorHandle, m: &mut DMatrix<Complex64>, exec: &dyn Executor) -> Result<()> {
    let n = m.nrows();
    let failed = core::sync::atomic::AtomicBool::new(false);
    // Factor once up front so workers only run triangular solves.
    op.factorization()?;
    exec.for_each_chunk(m.as_mut_slice(), n, &|_, col| {
        if op.solve_in_place(col).is_err() {
            failed.store(true, core::sync::atomic::Ordering::Relaxed);
        }
    });
    if failed.into_inner() {
        return Err(invalid("column solve failed"));
    }
    Ok(())
}

/// `D_l⁻¹ Π D_r⁻ᴴ` via `M = D_l⁻¹ Π`, `Z = D_r⁻¹ Mᴴ`, result `Zᴴ`.
/// Costs `n_total` solves on each handle. When both handles are the same
/// operator and `Π` is Hermitian the result is symmetrized.
pub fn cross_covariance(
    op_left: &OperatorHandle,
    op_right: &OperatorHandle,
    source: &CovKernel,
    exec: &dyn Executor,
) -> Result<CovKernel> {
    if op_left.grid() != source.grid() || op_right.grid() != source.grid() {
        return Err(Error::GridMismatch);
    }
    let mut m = source.values().clone();
    solve_columns(op_left, &mut m, exec)?;
    let mut z = m.adjoint();
    solve_columns(op_right, &mut z, exec)?;
    let mut out = CovKernel::new(*source.grid(), z.adjoint(), false)?;
    if core::ptr::eq(op_left, op_right) && source.hermitian_flag() {
        out.symmetrize();
    }
    Ok(out)
}

/// `cov[u,u] = D⁻¹ Π_f D⁻ᴴ`; `2 · n_total` solves on `op`.
pub fn covariance_pushforward(op: &OperatorHandle, source: &CovKernel, exec: &dyn Executor) -> Result<CovKernel> {
    cross_covariance(op, op, source, exec)
}

/// Scaled eigenvector factors `(λ_i v_i, v_i)` of a Hermitian kernel,
/// dropping `|λ_i| < 1e-12 · |λ|_max`.
pub fn hermitian_factors(y: &CovKernel) -> Result<Vec<(Field, Field)>> {
    if !y.is_hermitian(HERMITIAN_TOL) {
        return Err(invalid("low-rank factors require Hermitian data"));
    }
    let grid = *y.grid();
    let n = grid.n_total();
    let eig = SymmetricEigen::new(hermitian_part(y.values()));
    let lmax = eig.eigenvalues.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let mut order: Vec<usize> = (0..n).filter(|&i| lmax > 0.0 && eig.eigenvalues[i].abs() >= 1e-12 * lmax).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()));
    Ok(order
        .into_iter()
        .map(|i| {
            let v: Vec<Complex64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lam = eig.eigenvalues[i];
            let yv = v.iter().map(|x| x * lam).collect();
            (Field::new(grid, yv).expect("grid"), Field::new(grid, v).expect("grid"))
        })
        .collect())
}
