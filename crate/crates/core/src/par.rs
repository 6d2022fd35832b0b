//! Data-parallel helpers.
//!
//! With the `parallel` feature these dispatch to rayon; without it they run
//! the same closures sequentially. Work is always partitioned into the same
//! fixed-size chunks, so results are bit-identical in both builds and for any
//! thread count.

/// Rows handled per task in chunked kernels.
pub const ROW_BLOCK: usize = 32;

/// Calls `f(first_row, rows)` for consecutive blocks of `rows_per_block`
/// rows of width `row_len` in `out`.
pub fn for_each_row_block<F>(out: &mut [f64], row_len: usize, rows_per_block: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if row_len == 0 || out.is_empty() {
        return;
    }
    let block = row_len * rows_per_block.max(1);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if out.len() > block {
            out.par_chunks_mut(block)
                .enumerate()
                .for_each(|(b, chunk)| f(b * rows_per_block, chunk));
            return;
        }
    }
    for (b, chunk) in out.chunks_mut(block).enumerate() {
        f(b * rows_per_block, chunk);
    }
}

/// Order-preserving map over `0..n`.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
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

/// Order-preserving map over a slice.
pub fn map_slice<'a, A, T, F>(items: &'a [A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&'a A) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Runs `f` with at most `jobs` worker threads. `jobs <= 1` runs on the
/// calling thread only.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        f()
    }
}

/// Worker threads available to the current scope.
pub fn current_jobs() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Whether the crate was built with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
