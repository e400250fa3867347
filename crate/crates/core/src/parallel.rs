//! Order-preserving parallel map over index chunks.
//!
//! Results are combined in chunk order and chunk boundaries do not depend on
//! the thread count, so floating-point sums are reproducible.

use std::ops::Range;

use crate::error::Result;

/// Split `0..n` into at most `max_chunks` contiguous ranges.
pub(crate) fn chunks(n: usize, max_chunks: usize) -> Vec<Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let k = max_chunks.clamp(1, n);
    let size = n.div_ceil(k);
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

#[cfg(feature = "parallel")]
pub(crate) fn map_chunks<T, F>(ranges: Vec<Range<usize>>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Range<usize>) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    ranges.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_chunks<T, F>(ranges: Vec<Range<usize>>, f: F) -> Result<Vec<T>>
where
    F: Fn(Range<usize>) -> Result<T>,
{
    ranges.into_iter().map(f).collect()
}

/// Cap the worker pool used by this crate; 0 selects the default. Has an
/// effect only before the first parallel operation.
pub fn set_thread_limit(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}
