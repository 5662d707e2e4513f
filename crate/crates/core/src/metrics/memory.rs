//! Allocation accounting for peak transient memory.
//!
//! [`CountingAlloc`] wraps the system allocator and tracks live and peak
//! bytes process-wide. It only counts once registered by the final binary:
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: malle_core::metrics::CountingAlloc = malle_core::metrics::CountingAlloc;
//! ```
//!
//! Counters are global, so measurements are only meaningful while no other
//! thread allocates.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicIsize, Ordering};

use crate::error::{Error, Result};

static INSTALLED: AtomicBool = AtomicBool::new(false);
static MEASURING: AtomicBool = AtomicBool::new(false);
static CURRENT: AtomicIsize = AtomicIsize::new(0);
static PEAK: AtomicIsize = AtomicIsize::new(0);

pub struct CountingAlloc;

fn grow(bytes: usize) {
    let now = CURRENT.fetch_add(bytes as isize, Ordering::Relaxed) + bytes as isize;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

fn shrink(bytes: usize) {
    CURRENT.fetch_sub(bytes as isize, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        INSTALLED.store(true, Ordering::Relaxed);
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        INSTALLED.store(true, Ordering::Relaxed);
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        shrink(layout.size());
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            shrink(layout.size());
            grow(new_size);
        }
        p
    }
}

/// Whether [`CountingAlloc`] is the registered global allocator.
pub fn counting_installed() -> bool {
    // Any allocation through the wrapper flips the flag.
    drop(Vec::<u8>::with_capacity(1));
    INSTALLED.load(Ordering::Relaxed)
}

struct Guard;

impl Drop for Guard {
    fn drop(&mut self) {
        MEASURING.store(false, Ordering::SeqCst);
    }
}

/// Runs `f` and returns its result with the peak number of f32-sized
/// elements allocated during the call, excluding memory still held when
/// `f` returns (its outputs) and everything allocated before (its inputs).
pub fn measure_peak_aux<R>(f: impl FnOnce() -> R) -> Result<(R, usize)> {
    if !counting_installed() {
        return Err(Error::contract("measure_peak_aux requires CountingAlloc as the global allocator"));
    }
    if MEASURING.swap(true, Ordering::SeqCst) {
        return Err(Error::contract("measure_peak_aux cannot be nested"));
    }
    let _guard = Guard;
    let base = CURRENT.load(Ordering::SeqCst);
    PEAK.store(base, Ordering::SeqCst);
    let out = f();
    let retained = (CURRENT.load(Ordering::SeqCst) - base).max(0);
    let peak = PEAK.load(Ordering::SeqCst) - base;
    let aux = (peak - retained).max(0) as usize;
    Ok((out, aux.div_ceil(std::mem::size_of::<f32>())))
}
