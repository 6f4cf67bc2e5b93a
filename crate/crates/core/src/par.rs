//! Data-parallel helpers with a sequential fallback.
//!
//! All hot loops in the crate run through these helpers. With the `parallel`
//! feature (default) they dispatch to rayon; without it, or after
//! [`set_sequential`]`(true)`, they run as plain sequential loops. Every
//! helper assigns each output element to exactly one closure invocation with
//! a fixed inner evaluation order, so results are bitwise identical in both
//! modes regardless of thread count.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential path at runtime (used by the benchmark suite to
/// compare both modes within one build).
pub fn set_sequential(v: bool) {
    FORCE_SEQUENTIAL.store(v, Ordering::Relaxed);
}

pub fn is_sequential() -> bool {
    !cfg!(feature = "parallel") || FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Minimum number of scalar ops before a loop is worth farming out.
pub const PAR_THRESHOLD: usize = 16 * 1024;

/// Visit equal-size mutable chunks of `data`, passing the chunk index.
/// `cost` is an estimate of scalar work per chunk used to gate parallelism.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, cost: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(chunk > 0 && data.len() % chunk == 0);
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() && cost >= PAR_THRESHOLD && data.len() / chunk > 1 {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Map `0..n` to a Vec, preserving index order.
pub fn map_collect<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_map_matches_sequential() {
        let mut a = vec![0u64; 64 * 512];
        let mut b = a.clone();
        for_each_chunk_mut(&mut a, 512, PAR_THRESHOLD, |i, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 31 + j) as u64;
            }
        });
        set_sequential(true);
        for_each_chunk_mut(&mut b, 512, PAR_THRESHOLD, |i, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 31 + j) as u64;
            }
        });
        set_sequential(false);
        assert_eq!(a, b);
    }

    #[test]
    fn map_collect_order() {
        let v = map_collect(100, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }
}
