//! Data-parallel helpers with a sequential fallback.
//!
//! All parallel loops in this crate go through these functions. Work is split
//! into fixed-size chunks that do not depend on the number of worker threads,
//! and per-chunk results are merged by the caller in chunk order. Outputs are
//! therefore bit-identical for any thread count, and identical to the
//! sequential build (`--no-default-features`).

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size used for count/gradient accumulation loops.
pub const ACCUM_CHUNK: usize = 256;

/// Configure the global worker pool. A cap of 0 leaves the default
/// (one worker per logical CPU). Calling this more than once, or after the
/// pool has been used, has no effect.
pub fn configure_threads(cap: usize) {
    #[cfg(feature = "parallel")]
    {
        if cap > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(cap)
                .build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = cap;
    }
}

/// Map `f` over fixed-size chunks of `items`, returning per-chunk results in
/// chunk order.
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    assert!(chunk >= 1);
    #[cfg(feature = "parallel")]
    {
        items.par_chunks(chunk).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.chunks(chunk).map(f).collect()
    }
}

/// Map `f` over items, preserving input order in the output.
pub fn map_items<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Map `f` over an index range, preserving index order in the output.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_map_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let sums = map_chunks(&items, 64, |c| c.iter().sum::<u64>());
        let total: u64 = sums.iter().sum();
        assert_eq!(total, 1000 * 999 / 2);
        assert_eq!(sums.len(), 1000_usize.div_ceil(64));
        // first chunk is exactly items[0..64]
        assert_eq!(sums[0], (0..64).sum::<u64>());
    }

    #[test]
    fn map_items_preserves_order() {
        let items: Vec<usize> = (0..257).collect();
        let out = map_items(&items, |&x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn map_range_matches_sequential() {
        let out = map_range(100, |i| i * i);
        let expect: Vec<usize> = (0..100).map(|i| i * i).collect();
        assert_eq!(out, expect);
    }
}
