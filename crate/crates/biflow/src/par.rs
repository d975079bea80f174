//! Deterministic data-parallel primitives.
//!
//! Every weighted sum in this crate goes through [`tree_sum_by`], which adds
//! terms in a fixed pairwise-tree order. The tree shape depends only on the
//! index range, never on thread count or scheduling, so reductions are
//! bit-identical between the rayon path and the sequential fallback, and
//! across `BIFLOW_THREADS` settings.
//!
//! Node-parallel map loops go through [`for_each_chunk_mut`]: each output
//! chunk is written by exactly one closure call, so the result does not
//! depend on the execution order either.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Leaf size of the summation tree; below this a plain left fold is used.
/// Part of the summation order, so changing it changes low-order bits.
const SUM_LEAF: usize = 512;

/// Range length below which recursion stays on the current thread.
#[cfg(feature = "parallel")]
const PAR_CUTOFF: usize = 16 * 1024;

/// Pairwise-tree sum of `f(i)` for `i` in `lo..hi`. Deterministic: the
/// association of additions is a function of the range alone.
pub fn tree_sum_by<F>(lo: usize, hi: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    debug_assert!(lo <= hi);
    let len = hi - lo;
    if len <= SUM_LEAF {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        return acc;
    }
    let mid = lo + len / 2;
    #[cfg(feature = "parallel")]
    {
        if len >= PAR_CUTOFF {
            let (a, b) = rayon::join(|| tree_sum_by(lo, mid, f), || tree_sum_by(mid, hi, f));
            return a + b;
        }
    }
    tree_sum_by(lo, mid, f) + tree_sum_by(mid, hi, f)
}

/// Sequential twin of [`tree_sum_by`] with the identical tree shape.
/// Exists for the bench suite; returns bit-identical results.
pub fn tree_sum_by_seq<F>(lo: usize, hi: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64,
{
    let len = hi - lo;
    if len <= SUM_LEAF {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        return acc;
    }
    let mid = lo + len / 2;
    tree_sum_by_seq(lo, mid, f) + tree_sum_by_seq(mid, hi, f)
}

/// Pairwise-tree sum of a slice.
pub fn tree_sum(xs: &[f64]) -> f64 {
    tree_sum_by(0, xs.len(), &|i| xs[i])
}

/// Splits `out` into consecutive chunks of `stride` values and calls
/// `f(chunk_index, chunk)` for each, in parallel when the feature is on.
pub fn for_each_chunk_mut<F>(out: &mut [f64], stride: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(out.len() % stride, 0);
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(stride)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(stride)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
    }
}

/// Sequential twin of [`for_each_chunk_mut`] for the bench suite.
pub fn for_each_chunk_mut_seq<F>(out: &mut [f64], stride: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    debug_assert_eq!(out.len() % stride, 0);
    out.chunks_mut(stride)
        .enumerate()
        .for_each(|(i, chunk)| f(i, chunk));
}

/// Configures the global rayon pool from `BIFLOW_THREADS` if set. Call once
/// at process start; later calls are ignored by rayon. No-op without the
/// `parallel` feature.
pub fn init_threads_from_env() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(v) = std::env::var("BIFLOW_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    }
}
