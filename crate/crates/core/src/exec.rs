//! Pluggable execution of independent column tasks.
//!
//! The core only ships a serial executor; thread pools live in the std crate.
//! All reductions built on top of this trait use a fixed chunking that does
//! not depend on the number of workers, so results are bit-identical across
//! executors.

use num_complex::Complex64;

pub trait Executor: Send + Sync {
    /// Calls `f(i, chunk)` for every consecutive `chunk_len` slice of `buf`.
    /// Chunks may run concurrently and in any order.
    fn for_each_chunk(
        &self,
        buf: &mut [Complex64],
        chunk_len: usize,
        f: &(dyn Fn(usize, &mut [Complex64]) + Sync),
    );

    fn threads(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn for_each_chunk(
        &self,
        buf: &mut [Complex64],
        chunk_len: usize,
        f: &(dyn Fn(usize, &mut [Complex64]) + Sync),
    ) {
        if chunk_len == 0 {
            return;
        }
        for (i, chunk) in buf.chunks_mut(chunk_len).enumerate() {
            f(i, chunk);
        }
    }
}

/// Number of partial sums used for deterministic parallel reductions over
/// `items` terms.
pub(crate) fn reduction_groups(items: usize) -> usize {
    items.clamp(1, 32)
}
