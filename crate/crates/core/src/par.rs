//! Deterministic parallel map over sample indices.
//!
//! Work is split into fixed chunks that are pulled from a shared counter by
//! scoped threads. Each chunk is a pure function of its index range and the
//! results are reassembled in index order, so the output does not depend on
//! the worker count or on scheduling.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Worker count from `LCFT_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    if let Ok(v) = std::env::var("LCFT_WORKERS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                return n;
            }
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Apply `f` to consecutive index ranges of length `chunk` covering `0..n`
/// and concatenate the results in index order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> Vec<T> + Sync,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    let range = |c: usize| c * chunk..((c + 1) * chunk).min(n);
    let workers = workers.max(1).min(n_chunks.max(1));
    if workers == 1 {
        return (0..n_chunks).flat_map(|c| f(range(c))).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Vec<T>>>> = Mutex::new((0..n_chunks).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let c = next.fetch_add(1, Ordering::Relaxed);
                if c >= n_chunks {
                    break;
                }
                let out = f(range(c));
                slots.lock().expect("worker panicked")[c] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .flat_map(|s| s.expect("chunk not computed"))
        .collect()
}

/// Per-index map, parallel over chunks of 64 indices.
pub fn map_indices<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    map_chunks(n, 64, workers, |r| r.map(&f).collect())
}
