//! Instrumented operation counts.
//!
//! Kernels add their forward multiply-accumulate counts to a thread-local
//! tally. [`counted`] isolates the work done by one closure so analytic cost
//! models can be compared against what the kernels actually executed.

use std::cell::Cell;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    /// Dense matmul / linear-layer multiply-accumulates.
    pub linear_macs: u64,
    /// 3x3 convolution multiply-accumulates.
    pub conv_macs: u64,
    /// Query-key dot products inside attention, per channel.
    pub score_macs: u64,
    /// Probability-weighted value sums inside attention, per channel.
    pub value_macs: u64,
    /// Softmax work inside attention, 5 flops per score element.
    pub softmax_flops: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.linear_macs + self.conv_macs + self.score_macs + self.value_macs + self.softmax_flops
    }
}

impl Add for OpCounts {
    type Output = OpCounts;

    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            linear_macs: self.linear_macs + o.linear_macs,
            conv_macs: self.conv_macs + o.conv_macs,
            score_macs: self.score_macs + o.score_macs,
            value_macs: self.value_macs + o.value_macs,
            softmax_flops: self.softmax_flops + o.softmax_flops,
        }
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, o: OpCounts) {
        *self = *self + o;
    }
}

/// Flops charged per softmax element.
pub const SOFTMAX_FLOPS_PER_ELEMENT: u64 = 5;

thread_local! {
    static COUNTS: Cell<OpCounts> = Cell::new(OpCounts::default());
}

pub(crate) fn record(f: impl FnOnce(&mut OpCounts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

/// Runs `f` and returns the counts it recorded on this thread.
pub fn counted<R>(f: impl FnOnce() -> R) -> (R, OpCounts) {
    let outer = COUNTS.with(|c| c.replace(OpCounts::default()));
    let r = f();
    let inner = COUNTS.with(|c| c.get());
    COUNTS.with(|c| c.set(outer + inner));
    (r, inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_scopes_isolate_and_propagate() {
        let (_, outer) = counted(|| {
            record(|c| c.linear_macs += 3);
            let (_, inner) = counted(|| record(|c| c.conv_macs += 5));
            assert_eq!(inner.conv_macs, 5);
            assert_eq!(inner.linear_macs, 0);
        });
        assert_eq!(outer.linear_macs, 3);
        assert_eq!(outer.conv_macs, 5);
        assert_eq!(outer.total(), 8);
    }
}
