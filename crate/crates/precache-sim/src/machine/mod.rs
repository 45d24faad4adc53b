//! Whole-machine driver: one memory system, `cores` pipelines stepping in
//! lockstep, and the run loop that carries a program to completion and then
//! drains the memory system to quiescence.

use crate::config::SimConfig;
use crate::isa::{ArchState, Program};
use crate::mem::MemorySystem;
use crate::pipeline::Core;
use crate::sparse::SparseMem;
use crate::stats::Stats;
use crate::trace::TraceEntry;

pub struct Machine {
    pub(crate) cfg: SimConfig,
    pub(crate) prog: Program,
    pub(crate) ms: MemorySystem,
    pub(crate) cores: Vec<Core>,
    now: u64,
    finished_at: Option<u64>,
}

impl Machine {
    pub fn new(cfg: SimConfig, prog: Program) -> Self {
        let image = SparseMem::from_bytes(&prog.data);
        let ms = MemorySystem::new(&cfg, image);
        let cores =
            (0..cfg.cores as usize).map(|id| Core::new(id, &cfg, prog.entry)).collect();
        Self { cfg, prog, ms, cores, now: 0, finished_at: None }
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn finished(&self) -> bool {
        self.finished_at.is_some()
    }

    pub fn quiesced(&self) -> bool {
        self.ms.quiescent()
    }

    pub fn stats(&self) -> &Stats {
        &self.ms.stats
    }

    pub fn memory(&self) -> &SparseMem {
        &self.ms.mem
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn commit_trace(&self, core: usize) -> &[TraceEntry] {
        self.cores[core].trace()
    }

    pub fn arch_state(&self, core: usize) -> ArchState {
        let c = &self.cores[core];
        ArchState {
            regs: c.regs,
            pc: c.arch_pc(),
            halted: c.halted(),
            fault: c.fault(),
            committed: c.committed(),
            hit_cap: self.ms.stats.max_cycles_exceeded,
        }
    }

    fn step(&mut self) {
        self.ms.cycle(self.now);
        for (core, seq, value, evicted) in std::mem::take(&mut self.ms.load_done) {
            self.cores[core].on_load_done(seq, value, evicted);
        }
        for (core, block) in std::mem::take(&mut self.ms.ifetch_done) {
            self.cores[core].on_ifetch_done(block);
        }
        for (core, seq) in std::mem::take(&mut self.ms.store_done) {
            self.cores[core].on_store_done(seq);
        }
        for c in 0..self.cores.len() {
            self.cores[c].step(&mut self.ms, &self.prog, self.now);
        }
        self.now += 1;
    }

    /// Step up to `cycles` more cycles without draining; stops early once
    /// every core has halted or faulted.
    pub fn run_for(&mut self, cycles: u64) {
        let end = self.now + cycles;
        while self.finished_at.is_none() && self.now < end {
            self.step();
            if self.cores.iter().all(|c| c.finished()) {
                self.finished_at = Some(self.now);
            }
        }
    }

    /// Run to completion, then let every in-flight request and walk finish
    /// so dumps observe settled state. Cycle and commit counts cover only
    /// the run itself.
    pub fn run(&mut self) {
        while self.finished_at.is_none() && self.now < self.cfg.max_cycles {
            self.step();
            if self.cores.iter().all(|c| c.finished()) {
                self.finished_at = Some(self.now);
            }
        }
        if self.finished_at.is_none() {
            self.ms.stats.max_cycles_exceeded = true;
        }
        self.ms.stats.cycles = self.finished_at.unwrap_or(self.now);
        self.ms.stats.committed = self.cores.iter().map(|c| c.committed()).sum();
        self.drain();
    }

    fn drain(&mut self) {
        let bound = self.now + 1_000_000;
        while !self.ms.quiescent() && self.now < bound {
            self.ms.cycle(self.now);
            self.ms.load_done.clear();
            self.ms.ifetch_done.clear();
            self.ms.store_done.clear();
            self.now += 1;
        }
        debug_assert!(
            self.ms.quiescent(),
            "memory system failed to drain:\n{}",
            self.ms.pending_summary()
        );
    }
}

#[cfg(test)]
mod tests;
