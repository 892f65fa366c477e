//! Execution-strategy helpers.
//!
//! The hot loops (vehicle dynamics, per-sample gradients) are written
//! against these two functions so the same code runs sequentially or
//! data-parallel depending on the `parallel` cargo feature. Both paths
//! produce bit-identical results: `map_ordered` preserves input order, and
//! `fold_chunked` fixes the floating-point reduction tree (fold within
//! fixed-size chunks, then fold chunk results in chunk order) so the sum
//! does not depend on how work was scheduled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size used by [`fold_chunked`] callers across the crate. Small
/// enough to parallelize a 256-sample batch, large enough to amortize
/// scheduling.
pub const CHUNK: usize = 32;

/// Applies `f` to every item, returning outputs in input order.
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
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

/// Always-sequential twin of [`map_ordered`], independent of the
/// `parallel` feature. The bench suite uses it as the baseline to compare
/// the two execution strategies inside one binary.
pub fn map_ordered_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Folds `map(item)` into an accumulator with a schedule-independent
/// reduction tree: items are grouped into `chunk`-sized runs, each run is
/// folded left-to-right, and the per-run results are folded left-to-right.
///
/// `add` must be associative up to the reordering implied by that tree —
/// for floating point this means seq and par give the *same* rounding,
/// because the tree itself is fixed.
pub fn fold_chunked<T, A, M, Z, F>(items: &[T], chunk: usize, zero: Z, map: M, add: F) -> A
where
    T: Sync,
    A: Send,
    M: Fn(&T) -> A + Sync + Send,
    Z: Fn() -> A + Sync + Send,
    F: Fn(A, A) -> A + Sync + Send,
{
    assert!(chunk > 0, "chunk size must be positive");
    let chunks: Vec<&[T]> = items.chunks(chunk).collect();
    let partials = map_ordered(&chunks, |run| {
        run.iter().fold(zero(), |acc, item| add(acc, map(item)))
    });
    partials.into_iter().fold(zero(), add)
}
