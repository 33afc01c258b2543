//! Worker-thread cap for the compute kernels.
//!
//! `HALSIE_THREADS` bounds the rayon pool used inside convolution kernels.
//! The default of 1 keeps every run on the calling thread. Parallel runs
//! partition work by disjoint output rows, so results are bit-identical for
//! any thread count.

use std::sync::OnceLock;

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

/// Thread cap from `HALSIE_THREADS`, defaulting to 1.
pub fn thread_cap() -> usize {
    std::env::var("HALSIE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// The shared pool, or `None` when running single-threaded.
pub fn pool() -> Option<&'static rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let n = thread_cap();
        if n <= 1 {
            None
        } else {
            rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()
        }
    })
    .as_ref()
}
