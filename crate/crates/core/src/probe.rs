//! Per-thread counters of training-only operations, so evaluation paths can
//! assert they never chunk or augment.

use std::cell::Cell;

thread_local! {
    static CHUNKS: Cell<u64> = const { Cell::new(0) };
    static MASKS: Cell<u64> = const { Cell::new(0) };
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub chunk_calls: u64,
    pub mask_calls: u64,
}

pub(crate) fn record_chunk() {
    CHUNKS.with(|c| c.set(c.get() + 1));
}

pub(crate) fn record_mask() {
    MASKS.with(|c| c.set(c.get() + 1));
}

/// Counts for the current thread.
pub fn counts() -> Counts {
    Counts {
        chunk_calls: CHUNKS.with(Cell::get),
        mask_calls: MASKS.with(Cell::get),
    }
}

/// Runs `f` and returns its result with the operations it triggered on this thread.
pub fn observe<T>(f: impl FnOnce() -> T) -> (T, Counts) {
    let before = counts();
    let out = f();
    let after = counts();
    (
        out,
        Counts {
            chunk_calls: after.chunk_calls - before.chunk_calls,
            mask_calls: after.mask_calls - before.mask_calls,
        },
    )
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, rhs: Counts) -> Counts {
        Counts {
            chunk_calls: self.chunk_calls + rhs.chunk_calls,
            mask_calls: self.mask_calls + rhs.mask_calls,
        }
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}
