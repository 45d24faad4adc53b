//! Branch direction prediction (per-pc 2-bit saturating counters) and a
//! branch target buffer for indirect jumps. Counters start weakly not-taken;
//! the BTB is written only when a jump resolves.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Default)]
pub struct Predictor {
    counters: BTreeMap<u32, u8>,
    btb: BTreeMap<u32, u32>,
}

impl Predictor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn predict_taken(&self, pc: u32) -> bool {
        self.counters.get(&pc).copied().unwrap_or(1) >= 2
    }

    /// None when the BTB has no entry; callers fall through.
    pub fn predict_target(&self, pc: u32) -> Option<u32> {
        self.btb.get(&pc).copied()
    }

    pub fn train_cond(&mut self, pc: u32, taken: bool) {
        let c = self.counters.entry(pc).or_insert(1);
        if taken {
            *c = (*c + 1).min(3);
        } else {
            *c = c.saturating_sub(1);
        }
    }

    pub fn train_target(&mut self, pc: u32, target: u32) {
        self.btb.insert(pc, target);
    }
}
