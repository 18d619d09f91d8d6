//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the work runs on the ambient rayon pool,
//! otherwise on the calling thread. Results never depend on which path ran or
//! on the pool size: maps preserve input order and folds split the input into
//! fixed-size chunks whose partial results are merged left to right.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Records per fold chunk. Fixed so float summation order is independent of
/// the thread count.
pub(crate) const FOLD_CHUNK: usize = 2048;

pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Folds `items` chunk by chunk and merges the partials in chunk order.
pub(crate) fn chunked_fold<T, A, I, F, M>(items: &[T], init: I, fold: F, merge: M) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, &T) + Sync + Send,
    M: Fn(&mut A, A),
{
    let fold_chunk = |chunk: &[T]| {
        let mut acc = init();
        for item in chunk {
            fold(&mut acc, item);
        }
        acc
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<A> = items.par_chunks(FOLD_CHUNK).map(fold_chunk).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<A> = items.chunks(FOLD_CHUNK).map(fold_chunk).collect();

    let mut total = init();
    for part in partials {
        merge(&mut total, part);
    }
    total
}
