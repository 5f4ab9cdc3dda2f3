//! Data-parallel helpers with a sequential fallback.
//!
//! Hot loops (per-record loss terms, bootstrap resamples, bag members,
//! search trials) run through [`chunked_map`]. Work is split into
//! fixed-size chunks that are mapped in parallel and reduced in chunk
//! order, so results are identical whichever backend runs them.

/// Execution backend for a data-parallel loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    /// Rayon work-stealing; falls back to sequential when the `parallel`
    /// feature is disabled.
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Maps `f` over index chunks of `0..n` and returns per-chunk results in
/// chunk order. `f` receives the chunk's index range.
pub fn chunked_map<U, F>(mode: ExecMode, n: usize, chunk: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(std::ops::Range<usize>) -> U + Sync + Send,
{
    assert!(chunk > 0);
    let ranges: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(chunk)
        .map(|s| s..(s + chunk).min(n))
        .collect();
    match mode {
        ExecMode::Sequential => ranges.into_iter().map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                ranges.into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                ranges.into_iter().map(f).collect()
            }
        }
    }
}

/// Maps `f` over `0..n`, one result per index, in index order.
pub fn indexed_map<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    let mut out: Vec<U> = Vec::with_capacity(n);
    for mut chunk in chunked_map(mode, n, 1.max(n / 64), |r| {
        r.map(&f).collect::<Vec<U>>()
    }) {
        out.append(&mut chunk);
    }
    out
}

/// Configures the global thread pool size. Call once, before any parallel
/// work; later calls are ignored.
pub fn configure_threads(jobs: usize) {
    #[cfg(feature = "parallel")]
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
}
