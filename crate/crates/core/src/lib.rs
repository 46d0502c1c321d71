//! Numerical core for correlation-based passive imaging.
//!
//! ```
//! use passim_core::{forward::ForwardProblem, grid::Grid, model::{Admissibility, Model}};
//! use passim_core::stochastic::{sample_ensemble, SourceCovariance};
//!
//! # fn main() -> Result<(), passim_core::error::Error> {
//! let grid = Grid::uniform(2, 16, 1.0)?;
//! let model = Model::abc(grid, Admissibility::with_defaults(0.5, &grid));
//! let mut theta = model.zeros();
//! theta.block_mut(0).fill(1.0);
//! let cov = SourceCovariance::white(grid, 1.0)?;
//! let problem = ForwardProblem::ensemble(model, cov.clone(), sample_ensemble(&cov, 8, 42)?)?;
//! let kernel = problem.forward(&theta)?;
//! assert!(kernel.is_covariance());
//! # Ok(())
//! # }
//! ```

#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod adjoint;
pub mod banded;
pub mod derivative;
pub mod error;
pub mod exec;
pub mod forward;
pub mod grid;
pub mod model;
pub mod param;
pub mod reconstruct;
pub mod stochastic;

#[cfg(test)]
mod test_util;
