//! Data-parallel map helpers.
//!
//! The crate's hot loops are embarrassingly parallel over trajectories, test
//! cases and sweep levels. `map_indexed` fans those out with rayon when the
//! `parallel` feature is enabled (the default) and falls back to a plain
//! sequential loop otherwise. Results always come back in index order, so
//! output is identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sequential reference path: `f(i)` for `i in 0..n`, in order.
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync + Send,
    U: Send,
{
    (0..n).map(f).collect()
}

/// Rayon path. Outputs are collected in index order regardless of schedule.
#[cfg(feature = "parallel")]
pub fn map_indexed_par<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync + Send,
    U: Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// `f(i)` for `i in 0..n`, parallel when the feature allows it.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U + Sync + Send,
    U: Send,
{
    #[cfg(feature = "parallel")]
    {
        map_indexed_par(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(n, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_in_index_order() {
        let out = map_indexed(100, |i| i * i);
        let expected: Vec<usize> = (0..100).map(|i| i * i).collect();
        assert_eq!(out, expected);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn par_matches_seq() {
        let a = map_indexed_seq(257, |i| (i as f64).sin());
        let b = map_indexed_par(257, |i| (i as f64).sin());
        assert_eq!(a, b);
    }
}
