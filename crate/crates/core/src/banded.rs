//! Complex band matrices and their LU factorization with partial pivoting.
//!
//! Finite-difference operators on a row-major grid are banded with half
//! bandwidth `O(n^{dim-1})`, so a band LU gives direct solves at
//! `O(N · bandwidth)` per right-hand side.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::error::{ensure_len, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Square matrix with `lower` sub-diagonals and `upper` super-diagonals,
/// stored row by row over the band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<Complex64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        let lower = lower.min(n.saturating_sub(1));
        let upper = upper.min(n.saturating_sub(1));
        Self { n, lower, upper, data: vec![ZERO; n * (lower + upper + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> usize {
        self.lower
    }

    pub fn upper(&self) -> usize {
        self.upper
    }

    fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    fn in_band(&self, row: usize, col: usize) -> bool {
        col + self.lower >= row && col <= row + self.upper
    }

    fn slot(&self, row: usize, col: usize) -> usize {
        row * self.width() + (col + self.lower - row)
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        if row < self.n && col < self.n && self.in_band(row, col) {
            self.data[self.slot(row, col)]
        } else {
            ZERO
        }
    }

    /// Adds `value` at `(row, col)`.
    ///
    /// # Panics
    /// If the entry lies outside the band.
    pub fn add(&mut self, row: usize, col: usize, value: Complex64) {
        assert!(row < self.n && col < self.n && self.in_band(row, col), "entry ({row}, {col}) outside band");
        let s = self.slot(row, col);
        self.data[s] += value;
    }

    /// Column range of the band in `row`.
    pub fn row_span(&self, row: usize) -> core::ops::Range<usize> {
        row.saturating_sub(self.lower)..(row + self.upper + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        ensure_len(self.n, x.len())?;
        Ok((0..self.n)
            .map(|i| self.row_span(i).fold(ZERO, |acc, j| acc + self.data[self.slot(i, j)] * x[j]))
            .collect())
    }

    pub fn conj_transpose(&self) -> BandMatrix {
        let mut out = BandMatrix::zeros(self.n, self.upper, self.lower);
        for i in 0..self.n {
            for j in self.row_span(i) {
                let v = self.data[self.slot(i, j)];
                let s = out.slot(j, i);
                out.data[s] = v.conj();
            }
        }
        out
    }

    /// `self + alpha · other`; the result's band covers both inputs.
    pub fn add_scaled(&self, other: &BandMatrix, alpha: Complex64) -> Result<BandMatrix> {
        ensure_len(self.n, other.n)?;
        let mut out = BandMatrix::zeros(self.n, self.lower.max(other.lower), self.upper.max(other.upper));
        for i in 0..self.n {
            for j in self.row_span(i) {
                out.add(i, j, self.get(i, j));
            }
            for j in other.row_span(i) {
                out.add(i, j, other.get(i, j) * alpha);
            }
        }
        Ok(out)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| f64::max(m, v.norm()))
    }

    /// Maximum absolute difference against another band matrix.
    pub fn max_abs_diff(&self, other: &BandMatrix) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            let lo = self.row_span(i).start.min(other.row_span(i).start);
            let hi = self.row_span(i).end.max(other.row_span(i).end);
            for j in lo..hi {
                m = m.max((self.get(i, j) - other.get(i, j)).norm());
            }
        }
        m
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.n * self.n];
        for i in 0..self.n {
            for j in self.row_span(i) {
                out[i * self.n + j] = self.get(i, j);
            }
        }
        out
    }

    pub fn factorize(&self) -> Result<BandLu> {
        BandLu::new(self)
    }
}

/// Working row during elimination: entries for columns `start..start + vals.len()`.
struct Row {
    start: usize,
    vals: Vec<Complex64>,
}

impl Row {
    fn get(&self, col: usize) -> Complex64 {
        if col >= self.start && col - self.start < self.vals.len() {
            self.vals[col - self.start]
        } else {
            ZERO
        }
    }

    fn end(&self) -> usize {
        self.start + self.vals.len()
    }
}

/// LU factors `P·A = L·U` in the sequential form used by banded solvers:
/// the row interchange and the multipliers of each elimination step are
/// replayed in order on the right-hand side.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    pivots: Vec<usize>,
    /// Multipliers of step `k` for rows `k+1..k+1+len`.
    multipliers: Vec<Vec<Complex64>>,
    /// Row `k` of U covers columns `k..k + len`.
    upper: Vec<Vec<Complex64>>,
}

impl BandLu {
    fn new(a: &BandMatrix) -> Result<Self> {
        let n = a.n;
        let kl = a.lower;
        let mut rows: Vec<Row> = (0..n)
            .map(|i| {
                let span = a.row_span(i);
                Row { start: span.start, vals: span.map(|j| a.get(i, j)).collect() }
            })
            .collect();
        let tiny = a.max_abs() * f64::EPSILON * 4.0;
        let mut pivots = Vec::with_capacity(n);
        let mut multipliers = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);

        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = rows[k].get(k).norm();
            for r in k + 1..=last {
                let v = rows[r].get(k).norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > tiny) {
                return Err(Error::Singular { row: k });
            }
            rows.swap(k, p);
            pivots.push(p);

            let (head, tail) = rows.split_at_mut(k + 1);
            let pivot_row = &head[k];
            let pivot = pivot_row.get(k);
            let pivot_end = pivot_row.end();
            let mut mults = Vec::with_capacity(last - k);
            for row in tail.iter_mut().take(last - k) {
                let lead = row.get(k);
                if lead == ZERO {
                    mults.push(ZERO);
                    continue;
                }
                let m = lead / pivot;
                mults.push(m);
                if row.end() < pivot_end {
                    let extra = pivot_end - row.end();
                    row.vals.extend(core::iter::repeat(ZERO).take(extra));
                }
                for col in k + 1..pivot_end {
                    let pv = pivot_row.vals[col - pivot_row.start];
                    if pv != ZERO {
                        row.vals[col - row.start] -= m * pv;
                    }
                }
                row.vals[k - row.start] = ZERO;
            }
            multipliers.push(mults);
            let pr = &rows[k];
            upper.push(pr.vals[k - pr.start..].to_vec());
        }
        Ok(Self { n, pivots, multipliers, upper })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Overwrites `b` with `A⁻¹ b`.
    pub fn solve_in_place(&self, b: &mut [Complex64]) -> Result<()> {
        ensure_len(self.n, b.len())?;
        for k in 0..self.n {
            b.swap(k, self.pivots[k]);
            let bk = b[k];
            if bk != ZERO {
                for (off, m) in self.multipliers[k].iter().enumerate() {
                    b[k + 1 + off] -= m * bk;
                }
            }
        }
        for k in (0..self.n).rev() {
            let row = &self.upper[k];
            let mut acc = b[k];
            for (off, u) in row.iter().enumerate().skip(1) {
                acc -= u * b[k + off];
            }
            b[k] = acc / row[0];
        }
        Ok(())
    }
}
