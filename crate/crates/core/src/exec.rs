//! Kernel execution layer: data-parallel loops over fixed-size chunks.
//!
//! Every hot loop in this crate is expressed as a map over disjoint chunks of
//! an output slice, or as a reduction over per-chunk partials that are summed
//! in chunk order. Chunk boundaries are fixed constants, independent of the
//! thread count, so results are bit-identical whether a kernel runs on the
//! rayon pool, on a capped pool (`SPIXEL_SSC_THREADS`), or sequentially
//! (`--no-default-features`, or [`set_force_sequential`]).

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;

/// Chunk of pixel rows processed per work unit.
pub const PIXEL_CHUNK: usize = 512;
/// Chunk of matrix rows processed per work unit in dense kernels.
pub const ROW_CHUNK: usize = 32;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force all kernels onto the sequential path even when the `parallel`
/// feature is enabled. Used by the benchmark suite to compare both paths.
pub fn set_force_sequential(force: bool) {
    FORCE_SEQUENTIAL.store(force, Ordering::SeqCst);
}

pub fn force_sequential() -> bool {
    FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Thread cap from `SPIXEL_SSC_THREADS`, parsed once. `Some(1)` routes to the
/// sequential path; larger values size a dedicated pool.
fn thread_cap() -> Option<usize> {
    static CAP: OnceLock<Option<usize>> = OnceLock::new();
    *CAP.get_or_init(|| {
        std::env::var("SPIXEL_SSC_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
    })
}

#[cfg(feature = "parallel")]
mod backend {
    use super::*;
    use rayon::prelude::*;

    fn pool() -> Option<&'static rayon::ThreadPool> {
        static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
        POOL.get_or_init(|| {
            thread_cap().map(|n| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .expect("thread pool construction")
            })
        })
        .as_ref()
    }

    fn sequential_now() -> bool {
        force_sequential() || thread_cap() == Some(1)
    }

    fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
        match pool() {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    /// Apply `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of `out`.
    pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync,
    {
        if sequential_now() {
            for (k, c) in out.chunks_mut(chunk).enumerate() {
                f(k, c);
            }
        } else {
            install(|| {
                out.par_chunks_mut(chunk)
                    .enumerate()
                    .for_each(|(k, c)| f(k, c));
            });
        }
    }

    /// Sum `f(start..end)` over fixed chunks of `0..n`; partials are combined
    /// in chunk order so the result does not depend on scheduling.
    pub fn sum_chunks<F>(n: usize, chunk: usize, f: F) -> f64
    where
        F: Fn(std::ops::Range<usize>) -> f64 + Sync,
    {
        let bounds = chunk_bounds(n, chunk);
        if sequential_now() {
            bounds.into_iter().map(|r| f(r)).sum()
        } else {
            install(|| {
                bounds
                    .into_par_iter()
                    .map(|r| f(r))
                    .collect::<Vec<f64>>()
                    .into_iter()
                    .sum()
            })
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod backend {
    /// Apply `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of `out`.
    pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
    where
        F: Fn(usize, &mut [T]),
    {
        for (k, c) in out.chunks_mut(chunk).enumerate() {
            f(k, c);
        }
    }

    /// Sum `f(start..end)` over fixed chunks of `0..n` in chunk order.
    pub fn sum_chunks<F>(n: usize, chunk: usize, f: F) -> f64
    where
        F: Fn(std::ops::Range<usize>) -> f64,
    {
        super::chunk_bounds(n, chunk).into_iter().map(f).sum()
    }
}

pub use backend::{for_each_chunk_mut, sum_chunks};

fn chunk_bounds(n: usize, chunk: usize) -> Vec<std::ops::Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|k| (k * chunk)..((k + 1) * chunk).min(n))
        .collect()
}
