use alloc::vec::Vec;
use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::{Field, Grid, RealField};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(grid: &Grid, r: &mut ChaCha8Rng) -> Field {
    let values: Vec<Complex64> = (0..grid.n_total())
        .map(|_| Complex64::new(StandardNormal.sample(r), StandardNormal.sample(r)))
        .collect();
    Field::new(*grid, values).unwrap()
}

pub fn random_real(grid: &Grid, r: &mut ChaCha8Rng) -> RealField {
    let values: Vec<f64> = (0..grid.n_total()).map(|_| StandardNormal.sample(r)).collect();
    RealField::new(*grid, values).unwrap()
}
