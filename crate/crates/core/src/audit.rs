//! Process-wide tally of decodes and constraint violations.
//!
//! Every Viterbi decode is checked against the lattice it came from, and
//! model-level decodes are additionally checked against the label encoding
//! rules. The counters let test harnesses assert that no decode in a run ever
//! produced an illegal sequence.

use std::sync::atomic::{AtomicU64, Ordering};

static DECODES: AtomicU64 = AtomicU64::new(0);
static VIOLATIONS: AtomicU64 = AtomicU64::new(0);

pub(crate) fn record_decode(valid: bool) {
    DECODES.fetch_add(1, Ordering::Relaxed);
    if !valid {
        VIOLATIONS.fetch_add(1, Ordering::Relaxed);
    }
}

pub(crate) fn record_violation() {
    VIOLATIONS.fetch_add(1, Ordering::Relaxed);
}

/// Snapshot of the tally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeAudit {
    pub decodes: u64,
    pub violations: u64,
}

pub fn snapshot() -> DecodeAudit {
    DecodeAudit {
        decodes: DECODES.load(Ordering::Relaxed),
        violations: VIOLATIONS.load(Ordering::Relaxed),
    }
}
