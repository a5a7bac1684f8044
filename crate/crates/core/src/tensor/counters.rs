//! Per-thread multiply-accumulate counter fed by the matrix and convolution kernels.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn add_macs(n: usize) {
    MACS.with(|m| m.set(m.get() + n as u64));
}

/// Multiply-accumulates executed by forward kernels on this thread since the last reset.
pub fn macs() -> u64 {
    MACS.with(|m| m.get())
}

pub fn reset_macs() {
    MACS.with(|m| m.set(0));
}

/// Runs `f` and returns its result with the forward MACs it executed.
pub fn count_macs<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = macs();
    let r = f();
    (r, macs() - before)
}
