//! Replica scheduling.
//!
//! Replica `r` always runs on seed `replica_seed(seed, r)` and results come
//! back in replica order, so output is identical whatever the pool size.
//! With the `parallel` feature the work runs on a rayon pool capped by the
//! `FVMOD_THREADS` environment variable; without it everything is sequential.

use crate::error::Result;

/// Worker count requested through `FVMOD_THREADS`, if any.
pub fn requested_threads() -> Option<usize> {
    std::env::var("FVMOD_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
}

/// Run `f` for replicas `0..count` one after another.
pub fn map_sequential<T, F>(count: u64, f: F) -> Result<Vec<T>>
where
    F: Fn(u64) -> Result<T>,
{
    (0..count).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_replicas<T, F>(count: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..count).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    match requested_threads() {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_replicas<T, F>(count: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    map_sequential(count, f)
}
