//! Chunk-level parallelism, enabled with the `parallel` feature.
//!
//! Work items are pure functions of their index, so results do not depend on
//! scheduling.

/// Calls `f(c, block)` for each `block_len`-sized block of `data`.
pub(crate) fn for_each_block<F>(data: &mut [f64], block_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if data.len() > block_len {
            use rayon::prelude::*;
            data.par_chunks_mut(block_len).enumerate().for_each(|(c, b)| f(c, b));
            return;
        }
    }
    data.chunks_mut(block_len).enumerate().for_each(|(c, b)| f(c, b));
}

/// Maps `f` over `0..n`, preserving order.
pub(crate) fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}
