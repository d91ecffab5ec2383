//! Path-parallel execution with results independent of the worker count.
//!
//! Work runs on the current rayon pool. Per-item results are collected in
//! item order and every reduction happens sequentially in that order, so the
//! floating-point result is identical for any number of threads.

use rayon::prelude::*;

/// Evaluates `f` for every path id in `0..n`, returning results in id order.
pub fn map_paths<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Folds path ids `0..n` in fixed-size chunks and merges chunk accumulators
/// in chunk order. The chunk size, not the worker count, fixes the order of
/// floating-point operations.
pub fn fold_paths<A, I, F, M>(n: usize, chunk: usize, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, A),
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let parts: Vec<A> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for p in c * chunk..((c + 1) * chunk).min(n) {
                fold(&mut acc, p);
            }
            acc
        })
        .collect();
    let mut total = init();
    for part in parts {
        merge(&mut total, part);
    }
    total
}
