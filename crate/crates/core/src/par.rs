//! Document-parallel map with a sequential fallback.
//!
//! With the `parallel` feature and more than one worker, items are processed
//! on a dedicated rayon pool. Results are always returned in input order, so
//! any reduction the caller performs over them is independent of the worker
//! count.

pub struct Executor {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    /// `workers == 1` runs sequentially; `0` uses all available cores.
    pub fn new(workers: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            let pool = if workers == 1 {
                None
            } else {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .ok()
            };
            Executor { workers, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            if workers != 1 {
                log::debug!("built without the `parallel` feature; running sequentially");
            }
            Executor { workers }
        }
    }

    pub fn sequential() -> Self {
        Executor::new(1)
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect());
        }
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }

    /// Like [`Executor::map`] over two zipped slices of equal length.
    pub fn map_zip<A, B, R, F>(&self, a: &[A], b: &[B], f: F) -> Vec<R>
    where
        A: Sync,
        B: Sync,
        R: Send,
        F: Fn(usize, &A, &B) -> R + Sync + Send,
    {
        assert_eq!(a.len(), b.len());
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| {
                a.par_iter()
                    .zip(b.par_iter())
                    .enumerate()
                    .map(|(i, (x, y))| f(i, x, y))
                    .collect()
            });
        }
        a.iter()
            .zip(b.iter())
            .enumerate()
            .map(|(i, (x, y))| f(i, x, y))
            .collect()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Executor::sequential()
    }
}

/// Sum in index order; the result does not depend on how the terms were
/// computed.
pub fn ordered_sum(values: &[f64]) -> f64 {
    values.iter().sum()
}
