//! Data-parallel map helpers with a sequential fallback.
//!
//! All parallelism in this crate is of the "independent outputs" kind: each
//! output slot is computed by its own internally sequential closure, so the
//! parallel and sequential paths produce bit-identical results. The `parallel`
//! feature (default on) routes large maps through rayon; without it, or below
//! [`PAR_THRESHOLD`], everything runs on the calling thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Minimum number of items before a map is worth spreading across threads.
pub const PAR_THRESHOLD: usize = 64;

/// `(0..n).map(f)`, parallel when enabled and `n` is large enough.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= PAR_THRESHOLD {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    map_indexed_seq(n, f)
}

/// Sequential `(0..n).map(f)`; always available so benchmarks can compare.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Map over a slice of independent jobs (one per seed, typically).
pub fn map_jobs<I, T, F>(jobs: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if jobs.len() > 1 {
            return jobs.par_iter().map(f).collect();
        }
    }
    jobs.iter().map(f).collect()
}

/// Fill disjoint row chunks of a flat `rows x cols` buffer in parallel.
///
/// `f(row_index, row_slice)` must write only into its own row.
pub fn fill_rows<F>(data: &mut [f64], rows: usize, cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(data.len(), rows * cols);
    #[cfg(feature = "parallel")]
    {
        if rows >= PAR_THRESHOLD && cols > 0 {
            data.par_chunks_mut(cols)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    fill_rows_seq(data, rows, cols, f);
}

/// Sequential counterpart of [`fill_rows`].
pub fn fill_rows_seq<F>(data: &mut [f64], rows: usize, cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    debug_assert_eq!(data.len(), rows * cols);
    if cols == 0 {
        return;
    }
    for (i, row) in data.chunks_mut(cols).enumerate().take(rows) {
        f(i, row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential() {
        let n = 3 * PAR_THRESHOLD;
        let a = map_indexed(n, |i| (i as f64).sqrt());
        let b = map_indexed_seq(n, |i| (i as f64).sqrt());
        assert_eq!(a, b);

        let mut x = vec![0.0; n * 4];
        let mut y = vec![0.0; n * 4];
        let f = |i: usize, row: &mut [f64]| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (i * 4 + j) as f64 * 0.5;
            }
        };
        fill_rows(&mut x, n, 4, f);
        fill_rows_seq(&mut y, n, 4, f);
        assert_eq!(x, y);
    }
}
