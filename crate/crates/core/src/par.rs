//! Data-parallel helpers with a sequential fallback.
//!
//! The `parallel` feature (on by default) pulls in rayon; without it every
//! helper runs sequentially and rayon is not compiled at all. Helpers only
//! parallelize over independently written outputs, never over a floating
//! point reduction, so results are bit-identical in both modes. Benchmarks
//! call the `*_with` variants directly to compare the two paths.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether the library dispatches to rayon by default.
pub const PARALLEL_DEFAULT: bool = cfg!(feature = "parallel");

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_with(n, PARALLEL_DEFAULT, f)
}

/// Like [`map_indexed`] but with an explicit parallelism switch.
pub fn map_indexed_with<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Run `f` on equal-length mutable chunks of `out`, chunk index passed along.
pub fn for_each_chunk<T, F>(out: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    for_each_chunk_with(out, chunk_len, PARALLEL_DEFAULT, f)
}

/// Like [`for_each_chunk`] but with an explicit parallelism switch.
pub fn for_each_chunk_with<T, F>(out: &mut [T], chunk_len: usize, parallel: bool, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0, "chunk_len must be positive");
    #[cfg(feature = "parallel")]
    if parallel {
        out.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = parallel;
    for (i, c) in out.chunks_mut(chunk_len).enumerate() {
        f(i, c);
    }
}
