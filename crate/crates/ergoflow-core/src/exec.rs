//! Bit-stable evaluation helpers.
//!
//! Ensembles and quadrature panels are evaluated slot-by-slot into a
//! preallocated vector (embarrassingly parallel, no shared accumulator) and
//! reduced afterwards with a fixed pairwise tree. The reduction order is a
//! function of the length alone, so results are identical no matter how many
//! worker threads ran the map, and identical between the `parallel` feature
//! and the sequential fallback.

use crate::C64;

/// Maps `f` over `0..n`, returning results in index order.
///
/// With the `parallel` feature this uses rayon; otherwise a plain loop.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential reference version of [`map_indexed`], kept available for
/// benchmarks comparing the two modes.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Sums a slice with a fixed pairwise tree (recursive halving).
///
/// The association order depends only on `len`, so the result is bit-stable
/// across thread counts and identical to the sequential fallback.
pub fn tree_sum(values: &[C64]) -> C64 {
    match values.len() {
        0 => C64::new(0.0, 0.0),
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            tree_sum(&values[..mid]) + tree_sum(&values[mid..])
        }
    }
}

/// Real-valued fixed-tree sum.
pub fn tree_sum_f64(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            tree_sum_f64(&values[..mid]) + tree_sum_f64(&values[mid..])
        }
    }
}

/// Fixed-tree mean.
pub fn tree_mean(values: &[C64]) -> C64 {
    if values.is_empty() {
        return C64::new(0.0, 0.0);
    }
    tree_sum(values) / values.len() as f64
}
