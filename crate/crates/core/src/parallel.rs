//! Deterministic parallel helpers.
//!
//! Randomized sweeps are cut into fixed-size chunks, each driven by its own
//! ChaCha stream, so results are identical for any worker count. The pool
//! size is read once from `MSS_FORGE_THREADS`.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;

pub const THREADS_ENV: &str = "MSS_FORGE_THREADS";

const CHUNK: usize = 2048;

/// The shared worker pool; `MSS_FORGE_THREADS` caps its size when set to a
/// positive integer.
pub fn pool() -> &'static ThreadPool {
    static POOL: OnceLock<ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            b = b.num_threads(n);
        }
        b.build().expect("thread pool")
    })
}

/// Generator for chunk `index` of the stream family `seed`.
pub fn chunk_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Split `total` draws into chunks, run `f(rng, count)` on each in parallel
/// and return the per-chunk results in chunk order.
pub fn chunked<R, F>(total: usize, seed: u64, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> R + Sync,
{
    let chunks = total.div_ceil(CHUNK);
    pool().install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let count = CHUNK.min(total - c * CHUNK);
                let mut rng = chunk_rng(seed, c as u64);
                f(&mut rng, count)
            })
            .collect()
    })
}

/// Map over `0..n` on the shared pool, preserving order.
pub fn par_map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    pool().install(|| (0..n).into_par_iter().map(f).collect())
}

/// Pairwise (cascade) summation; the result depends only on the order of
/// `xs`, not on how the work was scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn chunked_is_deterministic() {
        let run = || -> Vec<f64> { chunked(10_000, 5, |rng, n| (0..n).map(|_| rng.gen::<f64>()).sum()) };
        assert_eq!(run(), run());
        assert_eq!(run().len(), 10_000usize.div_ceil(CHUNK));
    }

    #[test]
    fn streams_differ() {
        let a: u64 = chunk_rng(1, 0).gen();
        let b: u64 = chunk_rng(1, 1).gen();
        assert_ne!(a, b);
    }

    #[test]
    fn pairwise_matches_plain_sum_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}
