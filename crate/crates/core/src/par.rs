//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the [`Execution::Parallel`] mode runs on the
//! rayon global pool. Without it, both modes run sequentially. Every helper
//! returns results in index order so reductions stay bit-identical across
//! modes and thread counts.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run work in parallel.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f).collect()`, in parallel when enabled.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_range`]; returns the first error by index.
pub fn try_map_range<T, E, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_range(exec, n, f).into_iter().collect()
}

/// Chunked fold-and-merge over `0..n`. Chunk boundaries are fixed by `chunk`,
/// not by the thread count, and partial results are merged in chunk order.
pub fn fold_chunks<A, I, F, M>(exec: Execution, n: usize, chunk: usize, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, A),
{
    let chunk = chunk.max(1);
    let chunks = n.div_ceil(chunk);
    let parts = map_range(exec, chunks, |c| {
        let mut acc = init();
        for i in c * chunk..((c + 1) * chunk).min(n) {
            fold(&mut acc, i);
        }
        acc
    });
    let mut out = init();
    for p in parts {
        merge(&mut out, p);
    }
    out
}
