//! Ordered block-parallel map. Results come back in block order whether or
//! not the `parallel` feature is enabled, so reductions over them are
//! bit-stable across thread counts.

use alloc::vec::Vec;

#[cfg(feature = "parallel")]
pub(crate) fn map_blocks<T, F>(n_blocks: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n_blocks).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_blocks<T, F>(n_blocks: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n_blocks).map(f).collect()
}

/// Split `n` items into at most `max_blocks` contiguous ranges.
pub(crate) fn block_ranges(n: usize, max_blocks: usize) -> Vec<core::ops::Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let blocks = max_blocks.clamp(1, n);
    let size = n.div_ceil(blocks);
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}
