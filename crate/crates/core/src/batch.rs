//! Index-ordered batch mapping with a sequential fallback.
//!
//! Results always come back in index order, so parallel and sequential
//! execution are observably identical for pure per-item functions.

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Always-sequential variant, kept for benchmarks and parity tests.
pub fn map_indexed_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let out = map_indexed(100, |i| i * i);
        let expect = map_indexed_seq(100, |i| i * i);
        assert_eq!(out, expect);
    }
}
