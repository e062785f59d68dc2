//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool
//! sized to the requested worker count. Without it, or with
//! [`Execution::Sequential`], items are processed in order on the calling
//! thread. Results are always returned in input order.

/// How a batch of independent jobs is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Up to `n` worker threads (0 means the rayon default).
    Parallel(usize),
}

impl Execution {
    pub fn from_workers(workers: usize) -> Self {
        if workers <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel(workers)
        }
    }

    pub fn workers(self) -> usize {
        match self {
            Execution::Sequential => 1,
            Execution::Parallel(n) => n.max(1),
        }
    }
}

/// Default worker count: logical cores capped at 8.
pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(8)
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().map(f).collect(),
        Execution::Parallel(n) => parallel_map(items, n, f),
    }
}

/// Like [`map`] but hands each job exclusive access to its item.
pub fn map_mut<T, R, F>(items: &mut [T], exec: Execution, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(&mut T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter_mut().map(f).collect(),
        Execution::Parallel(n) => parallel_map_mut(items, n, f),
    }
}

#[cfg(feature = "parallel")]
fn install<R: Send>(workers: usize, run: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(e) => {
            log::warn!("falling back to the global rayon pool: {e}");
            run()
        }
    }
}

#[cfg(feature = "parallel")]
fn parallel_map_mut<T, R, F>(items: &mut [T], workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(&mut T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    install(workers, || items.par_iter_mut().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
fn parallel_map_mut<T, R, F>(items: &mut [T], _workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(&mut T) -> R + Sync + Send,
{
    items.iter_mut().map(f).collect()
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    install(workers, || items.par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(items: &[T], _workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}
