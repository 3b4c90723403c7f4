//! Lightweight instrumentation counters.
//!
//! Attention layers report how many score elements (query x key pairs, per
//! head) they materialize; tests use this to confirm the factorized attention
//! layout computes the score volume its complexity analysis promises.

use std::cell::Cell;

thread_local! {
    static ATTENTION_SCORE_ELEMS: Cell<u64> = const { Cell::new(0) };
}

/// Zero the per-thread attention score counter.
pub fn reset_attention_elements() {
    ATTENTION_SCORE_ELEMS.with(|c| c.set(0));
}

/// Number of attention score elements recorded on this thread since the last
/// reset.
pub fn attention_elements() -> u64 {
    ATTENTION_SCORE_ELEMS.with(|c| c.get())
}

/// Called by attention implementations when they materialize a score tensor.
pub fn record_attention_elements(n: u64) {
    ATTENTION_SCORE_ELEMS.with(|c| c.set(c.get() + n));
}
