//! Thread-pool executor for the core Monte Carlo driver.

use heiskern_core::mc::Executor;
use rayon::prelude::*;

pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    pub fn new(threads: usize) -> anyhow::Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
        Ok(Pool { pool })
    }

    /// One worker per available core.
    pub fn available() -> anyhow::Result<Self> {
        Pool::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn map_blocks<A, F>(&self, n_blocks: usize, f: F) -> Vec<A>
    where
        A: Send,
        F: Fn(usize) -> A + Sync + Send,
    {
        self.pool.install(|| (0..n_blocks).into_par_iter().map(f).collect())
    }
}
