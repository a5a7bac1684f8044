//! Per-thread call counters for the stages of the inference path.
//!
//! The benchmark reads them around its timed region to prove which stages ran.

use std::cell::Cell;

use serde::Serialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StageCounts {
    pub forward: u64,
    pub decode: u64,
    pub nms: u64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Stage {
    Forward,
    Decode,
    Nms,
}

thread_local! {
    static COUNTS: Cell<StageCounts> = const { Cell::new(StageCounts { forward: 0, decode: 0, nms: 0 }) };
}

pub(crate) fn record(stage: Stage) {
    COUNTS.with(|c| {
        let mut v = c.get();
        match stage {
            Stage::Forward => v.forward += 1,
            Stage::Decode => v.decode += 1,
            Stage::Nms => v.nms += 1,
        }
        c.set(v);
    });
}

pub fn counts() -> StageCounts {
    COUNTS.with(|c| c.get())
}

impl StageCounts {
    /// Calls made between `before` and `self`.
    pub fn since(&self, before: &StageCounts) -> StageCounts {
        StageCounts {
            forward: self.forward - before.forward,
            decode: self.decode - before.decode,
            nms: self.nms - before.nms,
        }
    }
}
