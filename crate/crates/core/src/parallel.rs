//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the helpers fan out over the rayon
//! global pool. Without it, or after `set_exec(Exec::Sequential)`, they run
//! in plain iterator order. Every helper returns results in input order, so
//! outputs are identical in both modes.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

const SEQUENTIAL: u8 = 0;
const PARALLEL: u8 = 1;

static MODE: AtomicU8 = AtomicU8::new(if cfg!(feature = "parallel") { PARALLEL } else { SEQUENTIAL });

/// Selects the execution mode for all helpers in this module.
/// `Exec::Parallel` is a no-op request when the `parallel` feature is off.
pub fn set_exec(exec: Exec) {
    let v = match exec {
        Exec::Sequential => SEQUENTIAL,
        Exec::Parallel if cfg!(feature = "parallel") => PARALLEL,
        Exec::Parallel => SEQUENTIAL,
    };
    MODE.store(v, Ordering::Relaxed);
}

pub fn exec() -> Exec {
    if MODE.load(Ordering::Relaxed) == PARALLEL {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

pub fn is_parallel() -> bool {
    exec() == Exec::Parallel
}

/// Worker threads available to the parallel mode (1 when sequential).
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return rayon::current_num_threads();
    }
    1
}

/// Maps `f` over `0..n`, collecting in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, collecting in slice order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Runs `f` on consecutive mutable chunks of `data`, passing each chunk's
/// index. Chunks never overlap, so the result does not depend on scheduling.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}
