//! Order-preserving parallel maps and fixed-tree reductions.
//!
//! With the `parallel` feature enabled the work is spread over the rayon pool;
//! otherwise it runs sequentially. Results are collected in index order and
//! reductions combine fixed-size chunks left to right, so both paths produce
//! bit-identical output.

/// Chunk length used by [`chunked_fold`].
pub const REDUCTION_CHUNK: usize = 256;

/// `(0..n).map(f)` evaluated sequentially.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// `(0..n).map(f)` evaluated in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, f)
}

/// Reduce `items` by folding each chunk of [`REDUCTION_CHUNK`] elements with
/// `fold` (starting from `init()`), then combining chunk results in order
/// with `combine`.
pub fn chunked_fold<I, A, Init, Fold, Comb>(items: &[I], init: Init, fold: Fold, combine: Comb) -> A
where
    I: Sync,
    A: Send,
    Init: Fn() -> A + Sync + Send,
    Fold: Fn(A, &I) -> A + Sync + Send,
    Comb: Fn(A, A) -> A,
{
    let chunks: Vec<&[I]> = items.chunks(REDUCTION_CHUNK).collect();
    let partials = map_indexed(chunks.len(), |c| chunks[c].iter().fold(init(), &fold));
    partials.into_iter().fold(init(), combine)
}

/// Configure the global worker count. Returns false if the pool was already
/// initialized or parallelism is compiled out.
pub fn configure_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}
