//! Sequential fallbacks for the rayon-backed inner loops.
//!
//! Every kernel that goes data-parallel is written against these helpers so
//! the `parallel` feature only swaps the iteration strategy. All callers are
//! required to produce results that do not depend on scheduling: maps keep
//! input order, and reductions use a total order on their operands.

#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync,
{
    use rayon::prelude::*;
    items
        .par_iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items.iter().enumerate().map(|(i, item)| f(i, item)).collect()
}

/// Apply `f` to each row index in `0..rows`, writing into disjoint
/// `row_len`-sized chunks of `out`.
#[cfg(feature = "parallel")]
pub(crate) fn for_each_row<T, F>(out: &mut [T], row_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    use rayon::prelude::*;
    out.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(row, chunk)| f(row, chunk));
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_row<T, F>(out: &mut [T], row_len: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    for (row, chunk) in out.chunks_mut(row_len).enumerate() {
        f(row, chunk);
    }
}
