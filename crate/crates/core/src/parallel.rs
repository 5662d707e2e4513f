//! Process-wide worker count for row-parallel kernels.
//!
//! Defaults to 1. Kernels that split work over output rows keep a fixed
//! per-element summation order, so results do not depend on this setting.

use std::sync::atomic::{AtomicUsize, Ordering};

static THREADS: AtomicUsize = AtomicUsize::new(1);

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Sets the worker count; 0 is treated as 1.
pub fn set_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

/// Runs `f` with the worker count temporarily set to `n`.
pub fn with_threads<R>(n: usize, f: impl FnOnce() -> R) -> R {
    let prev = THREADS.swap(n.max(1), Ordering::Relaxed);
    let out = f();
    THREADS.store(prev, Ordering::Relaxed);
    out
}
