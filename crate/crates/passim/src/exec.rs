use num_complex::Complex64;
use passim_core::exec::Executor;
use rayon::prelude::*;

/// Executor backed by a dedicated rayon pool.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads == 0` lets rayon pick the worker count.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Self { pool })
    }
}

impl Executor for RayonExecutor {
    fn for_each_chunk(
        &self,
        buf: &mut [Complex64],
        chunk_len: usize,
        f: &(dyn Fn(usize, &mut [Complex64]) + Sync),
    ) {
        if chunk_len == 0 {
            return;
        }
        self.pool.install(|| buf.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c)));
    }

    fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}
