//! Work partitioning for data-parallel primitives.
//!
//! In deterministic mode (the default) partition boundaries depend only on
//! problem size, never on the worker count, so results are bit-identical for
//! any thread pool size.

use std::sync::atomic::{AtomicBool, Ordering};

static DETERMINISTIC: AtomicBool = AtomicBool::new(true);

const FIXED_CHUNK_ROWS: usize = 2048;

pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::Relaxed);
}

pub fn is_deterministic() -> bool {
    DETERMINISTIC.load(Ordering::Relaxed)
}

/// Rows per work item when splitting `total` independent output rows.
pub(crate) fn chunk_rows(total: usize) -> usize {
    if is_deterministic() {
        FIXED_CHUNK_ROWS
    } else {
        total.div_ceil(rayon::current_num_threads()).max(1)
    }
}
