//! Batch mapping helpers.
//!
//! All batch-level work (per-scene gradients, per-scene metrics, Monte Carlo
//! samples, dataset generation) is expressed as an order-preserving map over
//! indices. With the `parallel` feature the map runs on a rayon pool sized by
//! `COBRA_THREADS` (or rayon's default); without it the same closure runs
//! sequentially. Results are always collected in index order, so downstream
//! reductions see the same operand sequence either way and outputs are
//! bit-identical across thread counts.

#[cfg(feature = "parallel")]
use std::sync::Once;

#[cfg(feature = "parallel")]
static POOL_INIT: Once = Once::new();

/// Initialises the global rayon pool from `COBRA_THREADS` once per process.
/// Values that are absent, empty, zero, or unparsable leave the default.
#[cfg(feature = "parallel")]
fn ensure_pool() {
    POOL_INIT.call_once(|| {
        if let Ok(raw) = std::env::var("COBRA_THREADS") {
            if let Ok(n) = raw.trim().parse::<usize>() {
                if n > 0 {
                    // Ignore the error: another component may have built the
                    // pool already, which is fine.
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build_global();
                }
            }
        }
    });
}

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is enabled.
/// The returned vector is ordered by index regardless of execution order.
#[cfg(feature = "parallel")]
pub fn maybe_par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    ensure_pool();
    (0..n).into_par_iter().map(f).collect()
}

/// Sequential build of `maybe_par_map`.
#[cfg(not(feature = "parallel"))]
pub fn maybe_par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    seq_map(n, f)
}

/// Always-sequential map over `0..n`; the baseline the benches compare against.
pub fn seq_map<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
