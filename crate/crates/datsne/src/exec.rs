//! Execution policy for the data-parallel inner loops.
//!
//! Every hot loop in this crate is an ordered map over `0..n` followed by a
//! sequential fold over the collected parts. Because the fold order is fixed
//! (index order), the parallel and sequential paths produce bit-identical
//! results, and the parallel path is independent of the thread schedule.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
///
/// Runs on the rayon pool when `parallel` is true and the `parallel` feature
/// is enabled; otherwise runs inline.
pub(crate) fn map_indexed<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().map(&f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    (0..n).map(f).collect()
}
