//! Run-level data parallelism.
//!
//! With the `parallel` feature (default) [`ExecMode::Parallel`] maps over a
//! rayon pool; without it every mode runs sequentially. Results are always
//! returned in input order, so both modes produce identical output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

/// Maps `f` over `0..count`, optionally on a pool of `threads` workers.
pub fn map_indexed<T, F>(count: usize, mode: ExecMode, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..count).map(f).collect(),
        ExecMode::Parallel => parallel_map(count, threads, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(count: usize, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let work = || (0..count).into_par_iter().map(&f).collect();
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(work),
            Err(_) => work(),
        },
        _ => work(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(count: usize, _threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).map(f).collect()
}
