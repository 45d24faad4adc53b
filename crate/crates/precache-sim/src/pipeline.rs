//! One out-of-order core: in-order fetch, decode and commit around a
//! dataflow execution window, with speculative loads, trained branch
//! prediction and commit-time exception delivery.
//!
//! Architectural state (registers, the commit trace, memory via committed
//! stores) changes only at commit and only in sequence order, so every run
//! must agree with the architectural interpreter access for access. A
//! mispredicted branch or a faulting access discards everything younger via
//! [`Core::squash`], which also tells the memory system to erase the core's
//! quarantined state.
//!
//! Stage order within a cycle is commit, execute, decode, fetch; results the
//! memory system delivered this cycle are visible to commit immediately.

use crate::config::{Mode, SimConfig};
use crate::isa::{
    access_fault, AluOp, BrCond, Fault, FaultKind, Inst, Program, Reg, Src2, CORE_ID_REG,
    INST_BYTES, NUM_REGS,
};
use crate::mem::{MemorySystem, ReqId, StoreStart, Translation};
use crate::predictor::Predictor;
use crate::trace::{AccessKind, TraceEntry};
use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, Clone, Copy)]
enum Slot {
    Inst { pc: u32, inst: Inst, predicted_next: u32 },
    /// Fetch reached an address with no instruction; becomes a fetch fault
    /// if control really gets here.
    BadPc(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exec {
    Waiting,
    Running { done_at: u64 },
    /// Load issued to the memory system; completes on value delivery.
    MemWait,
    Done,
}

#[derive(Debug, Clone)]
struct RobEntry {
    pc: u32,
    inst: Inst,
    /// Fetch-time next pc; committing follows it unless a resolution
    /// overrode it.
    predicted_next: u32,
    /// Youngest uncommitted producer per source register at dispatch; None
    /// means the architectural register file is authoritative.
    deps: BTreeMap<Reg, Option<u64>>,
    state: Exec,
    /// Destination value, load value, or store value.
    result: u32,
    ea: u32,
    addr_ready: bool,
    mem_req: Option<ReqId>,
    issued_to_mem: bool,
    forwarded: bool,
    /// The load's fill displaced a resident L1D line (baseline only).
    fill_evicted: bool,
    resolved_target: Option<u32>,
}

impl RobEntry {
    fn new(pc: u32, inst: Inst, predicted_next: u32, deps: BTreeMap<Reg, Option<u64>>) -> Self {
        Self {
            pc,
            inst,
            predicted_next,
            deps,
            state: Exec::Waiting,
            result: 0,
            ea: 0,
            addr_ready: false,
            mem_req: None,
            issued_to_mem: false,
            forwarded: false,
            fill_evicted: false,
            resolved_target: None,
        }
    }

    fn actual_next(&self) -> u32 {
        self.resolved_target.unwrap_or(self.predicted_next)
    }

    fn mem_size(&self) -> u8 {
        match self.inst {
            Inst::Ld { byte: true, .. } => 1,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingException {
    seq: u64,
    fire_at: u64,
    fault: Fault,
}

pub struct Core {
    id: usize,
    mode: Mode,
    paging: bool,
    rob_cap: usize,
    fq_cap: usize,
    lq_cap: usize,
    sq_cap: usize,
    fetch_w: usize,
    issue_w: usize,
    commit_w: usize,
    exc_delay: u64,

    pub regs: [u32; NUM_REGS],
    /// Next fetch pc (follows predictions; reset by squash redirects).
    pc: u32,
    /// Where architectural control stands: the pc of the next instruction to
    /// commit, or the halt/fault point once finished.
    arch_pc: u32,
    halted: bool,
    fault: Option<Fault>,
    committed: u64,
    trace: Vec<TraceEntry>,

    fetchq: VecDeque<Slot>,
    /// Block the fetch stage is currently streaming instructions from.
    fetch_block: Option<u32>,
    pending_fetch: Option<(ReqId, u32)>,

    rob: BTreeMap<u64, RobEntry>,
    next_seq: u64,
    lq_used: usize,
    sq_used: usize,
    /// Youngest uncommitted writer per register, as of the dispatch frontier.
    producers: BTreeMap<Reg, u64>,
    pred: Predictor,

    exception: Option<PendingException>,
    /// Head store whose invalidation round is in flight: (seq, finished).
    store_wait: Option<(u64, bool)>,
}

impl Core {
    pub fn new(id: usize, cfg: &SimConfig, entry: u32) -> Self {
        let mut regs = [0; NUM_REGS];
        regs[CORE_ID_REG as usize] = id as u32;
        Self {
            id,
            mode: cfg.mode,
            paging: cfg.paging,
            rob_cap: cfg.rob_entries as usize,
            fq_cap: cfg.fetch_queue_entries as usize,
            lq_cap: cfg.load_queue_entries as usize,
            sq_cap: cfg.store_queue_entries as usize,
            fetch_w: cfg.fetch_width as usize,
            issue_w: cfg.issue_width as usize,
            commit_w: cfg.commit_width as usize,
            exc_delay: cfg.exception_delay_cycles,
            regs,
            pc: entry,
            arch_pc: entry,
            halted: false,
            fault: None,
            committed: 0,
            trace: Vec::new(),
            fetchq: VecDeque::new(),
            fetch_block: None,
            pending_fetch: None,
            rob: BTreeMap::new(),
            next_seq: 0,
            lq_used: 0,
            sq_used: 0,
            producers: BTreeMap::new(),
            pred: Predictor::new(),
            exception: None,
            store_wait: None,
        }
    }

    pub fn finished(&self) -> bool {
        self.halted || self.fault.is_some()
    }

    pub fn halted(&self) -> bool {
        self.halted
    }

    pub fn fault(&self) -> Option<Fault> {
        self.fault
    }

    pub fn committed(&self) -> u64 {
        self.committed
    }

    pub fn arch_pc(&self) -> u32 {
        self.arch_pc
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    // ---- completion events from the memory system ----

    pub fn on_load_done(&mut self, seq: u64, value: u32, evicted: bool) {
        let Some(e) = self.rob.get_mut(&seq) else { return };
        debug_assert_eq!(e.state, Exec::MemWait);
        e.result = value;
        e.fill_evicted = evicted;
        e.state = Exec::Done;
    }

    pub fn on_ifetch_done(&mut self, block: u32) {
        if self.pending_fetch.map(|(_, b)| b) == Some(block) {
            self.pending_fetch = None;
            self.fetch_block = Some(block);
        }
    }

    pub fn on_store_done(&mut self, seq: u64) {
        if let Some((s, finished)) = &mut self.store_wait {
            if *s == seq {
                *finished = true;
            }
        }
    }

    // ---- one cycle ----

    pub fn step(&mut self, ms: &mut MemorySystem, prog: &Program, now: u64) {
        if self.finished() {
            return;
        }
        self.advance(now);
        self.commit(ms, prog, now);
        if self.finished() {
            return;
        }
        self.execute(ms, now);
        self.decode(ms);
        if self.finished() {
            return;
        }
        self.fetch(ms, prog);
    }

    fn advance(&mut self, now: u64) {
        for e in self.rob.values_mut() {
            if let Exec::Running { done_at } = e.state {
                if done_at <= now {
                    e.state = Exec::Done;
                }
            }
        }
    }

    // ---- commit ----

    fn commit(&mut self, ms: &mut MemorySystem, prog: &Program, now: u64) {
        let mut budget = self.commit_w;
        // Same-block load commits within one cycle coalesce into one cache
        // write.
        let mut stc_started = std::collections::BTreeSet::new();
        while budget > 0 {
            let Some((&seq, head)) = self.rob.iter().next() else { break };
            let head = head.clone();

            if let Some(exc) = self.exception {
                debug_assert_eq!(exc.seq, seq);
                if now >= exc.fire_at {
                    self.fault = Some(exc.fault);
                    self.arch_pc = head.pc;
                    self.exception = None;
                    self.squash(ms, seq, None);
                }
                break;
            }
            if head.state != Exec::Done {
                break;
            }
            if head.inst.is_load() || head.inst.is_store() {
                if let Some(f) = access_fault(prog, head.pc, head.ea, head.mem_size()) {
                    self.exception =
                        Some(PendingException { seq, fire_at: now + self.exc_delay, fault: f });
                    continue;
                }
            }

            match head.inst {
                Inst::St { .. } => match self.store_wait {
                    None => {
                        if self.paging {
                            match ms.translate(self.id, seq, head.ea) {
                                Translation::Walking => break,
                                Translation::Ready(_) => {}
                            }
                        }
                        match ms.start_store(self.id, seq, head.ea, head.result) {
                            StoreStart::Busy => break,
                            StoreStart::Started => {
                                self.store_wait = Some((seq, false));
                                break;
                            }
                            StoreStart::Done => {
                                self.retire_store(ms, seq, &head);
                                budget -= 1;
                            }
                        }
                    }
                    Some((s, finished)) => {
                        debug_assert_eq!(s, seq);
                        if !finished {
                            break;
                        }
                        self.store_wait = None;
                        self.retire_store(ms, seq, &head);
                        budget -= 1;
                    }
                },
                Inst::Halt => {
                    self.committed += 1;
                    self.halted = true;
                    self.arch_pc = head.pc;
                    self.rob.remove(&seq);
                    self.squash(ms, seq + 1, None);
                    break;
                }
                _ => {
                    if head.inst.is_load() {
                        self.trace.push(TraceEntry {
                            seq: self.committed,
                            kind: AccessKind::Load,
                            addr: head.ea,
                            size: head.mem_size(),
                            value: head.result,
                        });
                        if let Some(rd) = head.inst.dest_reg() {
                            self.regs[rd as usize] = head.result;
                        }
                        let block = ms.block_of(head.ea);
                        if self.mode == Mode::Precache {
                            ms.commit_touch_l1d(self.id, block);
                            if !head.forwarded && stc_started.insert(block) {
                                ms.start_stc(self.id, block);
                            }
                        }
                        if self.paging {
                            ms.commit_promote_tlb(self.id, head.ea);
                        }
                        self.lq_used -= 1;
                    } else {
                        match head.inst {
                            Inst::Li { .. } | Inst::Mov { .. } | Inst::Alu { .. } => {
                                if let Some(rd) = head.inst.dest_reg() {
                                    self.regs[rd as usize] = head.result;
                                }
                            }
                            Inst::Br { .. } | Inst::Ji { .. } => {
                                if self.mode == Mode::Precache {
                                    ms.ipre_commit_guard(self.id);
                                }
                            }
                            _ => {}
                        }
                    }
                    self.committed += 1;
                    self.arch_pc = head.actual_next();
                    self.rob.remove(&seq);
                    budget -= 1;
                }
            }
        }
    }

    fn retire_store(&mut self, ms: &mut MemorySystem, seq: u64, head: &RobEntry) {
        self.trace.push(TraceEntry {
            seq: self.committed,
            kind: AccessKind::Store,
            addr: head.ea,
            size: 4,
            value: head.result,
        });
        if self.paging {
            ms.commit_promote_tlb(self.id, head.ea);
        }
        self.committed += 1;
        self.sq_used -= 1;
        self.arch_pc = head.actual_next();
        self.rob.remove(&seq);
    }

    // ---- execute / issue ----

    fn reg_value(&self, e: &RobEntry, r: Reg) -> Option<u32> {
        match e.deps.get(&r).copied().flatten() {
            None => Some(self.regs[r as usize]),
            Some(p) => match self.rob.get(&p) {
                // Producer committed; its value reached the register file.
                None => Some(self.regs[r as usize]),
                Some(pe) if pe.state == Exec::Done => Some(pe.result),
                Some(_) => None,
            },
        }
    }

    fn src2_value(&self, e: &RobEntry, s: Src2) -> Option<u32> {
        match s {
            Src2::Reg(r) => self.reg_value(e, r),
            Src2::Imm(v) => Some(v),
        }
    }

    /// Loads wait until every older store has its address and data, then
    /// either forward from the youngest same-word store or go to memory.
    fn older_stores_resolved(&self, seq: u64) -> bool {
        self.rob.range(..seq).all(|(_, e)| !e.inst.is_store() || e.addr_ready)
    }

    fn forward_value(&self, seq: u64, ea: u32, byte: bool) -> Option<u32> {
        let word = ea & !3;
        let (_, st) =
            self.rob.range(..seq).rev().find(|(_, e)| e.inst.is_store() && e.ea == word)?;
        let v = st.result;
        Some(if byte { (v >> (8 * (ea & 3))) & 0xff } else { v })
    }

    fn execute(&mut self, ms: &mut MemorySystem, now: u64) {
        let mut budget = self.issue_w;
        let mut branch_resolved = false;
        let seqs: Vec<u64> = self.rob.keys().copied().collect();
        for seq in seqs {
            if budget == 0 {
                break;
            }
            let Some(e) = self.rob.get(&seq) else { continue };
            if e.state != Exec::Waiting {
                continue;
            }
            match e.inst {
                Inst::Li { imm, .. } => {
                    let en = self.rob.get_mut(&seq).unwrap();
                    en.result = imm;
                    en.state = Exec::Running { done_at: now + 1 };
                    budget -= 1;
                }
                Inst::Nop | Inst::Halt | Inst::J { .. } => {
                    self.rob.get_mut(&seq).unwrap().state = Exec::Running { done_at: now + 1 };
                    budget -= 1;
                }
                Inst::Mov { rs, .. } => {
                    if let Some(v) = self.reg_value(e, rs) {
                        let en = self.rob.get_mut(&seq).unwrap();
                        en.result = v;
                        en.state = Exec::Running { done_at: now + 1 };
                        budget -= 1;
                    }
                }
                Inst::Alu { op, rs1, src2, .. } => {
                    let (Some(a), Some(b)) = (self.reg_value(e, rs1), self.src2_value(e, src2))
                    else {
                        continue;
                    };
                    let en = self.rob.get_mut(&seq).unwrap();
                    en.result = match op {
                        AluOp::Add => a.wrapping_add(b),
                        AluOp::Sub => a.wrapping_sub(b),
                        AluOp::Shl => a.wrapping_shl(b),
                    };
                    en.state = Exec::Running { done_at: now + 1 };
                    budget -= 1;
                }
                Inst::St { base, off, rs } => {
                    let (Some(b), Some(v)) = (self.reg_value(e, base), self.reg_value(e, rs))
                    else {
                        continue;
                    };
                    let en = self.rob.get_mut(&seq).unwrap();
                    en.ea = b.wrapping_add(off as u32);
                    en.result = v;
                    en.addr_ready = true;
                    en.state = Exec::Running { done_at: now + 1 };
                    budget -= 1;
                }
                Inst::Ld { base, off, byte, .. } => {
                    let Some(b) = self.reg_value(e, base) else { continue };
                    let ea = b.wrapping_add(off as u32);
                    if !self.older_stores_resolved(seq) {
                        continue;
                    }
                    if let Some(v) = self.forward_value(seq, ea, byte) {
                        let en = self.rob.get_mut(&seq).unwrap();
                        en.ea = ea;
                        en.addr_ready = true;
                        en.forwarded = true;
                        en.result = v;
                        en.state = Exec::Running { done_at: now + 1 };
                        budget -= 1;
                        continue;
                    }
                    if self.paging {
                        match ms.translate(self.id, seq, ea) {
                            Translation::Walking => {
                                let en = self.rob.get_mut(&seq).unwrap();
                                en.ea = ea;
                                en.addr_ready = true;
                                continue;
                            }
                            Translation::Ready(_) => {}
                        }
                    }
                    let size = if byte { 1 } else { 4 };
                    let rid = ms.issue_load(self.id, seq, ea, size);
                    let en = self.rob.get_mut(&seq).unwrap();
                    en.ea = ea;
                    en.addr_ready = true;
                    en.mem_req = Some(rid);
                    en.issued_to_mem = true;
                    en.state = Exec::MemWait;
                    budget -= 1;
                }
                Inst::Br { cond, rs1, src2, target } => {
                    // One resolution per cycle, oldest ready first. A younger
                    // guard may resolve under an older pending one; an older
                    // mispredict later squashes whatever that resolution did.
                    if branch_resolved {
                        continue;
                    }
                    let (Some(a), Some(b)) = (self.reg_value(e, rs1), self.src2_value(e, src2))
                    else {
                        continue;
                    };
                    let taken = match cond {
                        BrCond::Eq => a == b,
                        BrCond::Ne => a != b,
                    };
                    let actual = if taken { target } else { e.pc.wrapping_add(INST_BYTES) };
                    let (pc, predicted) = (e.pc, e.predicted_next);
                    self.pred.train_cond(pc, taken);
                    let en = self.rob.get_mut(&seq).unwrap();
                    en.resolved_target = Some(actual);
                    en.state = Exec::Running { done_at: now + 1 };
                    branch_resolved = true;
                    budget -= 1;
                    if actual != predicted {
                        self.squash(ms, seq + 1, Some(actual));
                        break;
                    }
                }
                Inst::Ji { rs } => {
                    if branch_resolved {
                        continue;
                    }
                    let Some(actual) = self.reg_value(e, rs) else { continue };
                    let (pc, predicted) = (e.pc, e.predicted_next);
                    self.pred.train_target(pc, actual);
                    let en = self.rob.get_mut(&seq).unwrap();
                    en.resolved_target = Some(actual);
                    en.state = Exec::Running { done_at: now + 1 };
                    branch_resolved = true;
                    budget -= 1;
                    if actual != predicted {
                        self.squash(ms, seq + 1, Some(actual));
                        break;
                    }
                }
            }
        }
    }

    // ---- decode / dispatch ----

    fn decode(&mut self, ms: &mut MemorySystem) {
        let mut budget = self.issue_w;
        while budget > 0 && self.rob.len() < self.rob_cap {
            match self.fetchq.front().copied() {
                None => break,
                Some(Slot::BadPc(p)) => {
                    // Control architecturally reaches the unmapped address
                    // only once everything older has committed.
                    if self.rob.is_empty() {
                        self.fault = Some(Fault { kind: FaultKind::Fetch, pc: p, addr: p });
                        self.arch_pc = p;
                        let from = self.next_seq;
                        self.squash(ms, from, None);
                    }
                    break;
                }
                Some(Slot::Inst { pc, inst, predicted_next }) => {
                    if inst.is_load() && self.lq_used >= self.lq_cap {
                        break;
                    }
                    if inst.is_store() && self.sq_used >= self.sq_cap {
                        break;
                    }
                    self.fetchq.pop_front();
                    let seq = self.next_seq;
                    self.next_seq += 1;
                    if inst.is_load() {
                        self.lq_used += 1;
                    }
                    if inst.is_store() {
                        self.sq_used += 1;
                    }
                    if inst.is_guard() && self.mode == Mode::Precache {
                        ms.core_mem_mut(self.id).ipre.on_guard_decoded();
                    }
                    let mut deps = BTreeMap::new();
                    for r in inst.src_regs() {
                        deps.insert(r, self.producers.get(&r).copied());
                    }
                    if let Some(rd) = inst.dest_reg() {
                        self.producers.insert(rd, seq);
                    }
                    self.rob.insert(seq, RobEntry::new(pc, inst, predicted_next, deps));
                    budget -= 1;
                }
            }
        }
    }

    // ---- fetch ----

    fn predict_next(&self, pc: u32, inst: Inst) -> u32 {
        match inst {
            Inst::Br { target, .. } => {
                if self.pred.predict_taken(pc) {
                    target
                } else {
                    pc.wrapping_add(INST_BYTES)
                }
            }
            Inst::Ji { .. } => {
                self.pred.predict_target(pc).unwrap_or_else(|| pc.wrapping_add(INST_BYTES))
            }
            Inst::J { target } => target,
            _ => pc.wrapping_add(INST_BYTES),
        }
    }

    fn fetch(&mut self, ms: &mut MemorySystem, prog: &Program) {
        let mut budget = self.fetch_w;
        while budget > 0 && self.fetchq.len() < self.fq_cap {
            let block = ms.block_of(self.pc);
            if self.fetch_block != Some(block) {
                if self.pending_fetch.is_none() {
                    let guarded = self.mode == Mode::Precache
                        && ms.core_mem(self.id).ipre.guard_windows() > 0;
                    if guarded && ms.core_mem(self.id).ipre.full() {
                        // Quarantine full: fetch stalls until a guard
                        // commits or a squash clears it.
                        break;
                    }
                    let rid = ms.issue_ifetch(self.id, block, guarded);
                    self.pending_fetch = Some((rid, block));
                }
                break;
            }
            match prog.inst_at(self.pc) {
                None => {
                    if !matches!(self.fetchq.back(), Some(Slot::BadPc(_))) {
                        self.fetchq.push_back(Slot::BadPc(self.pc));
                    }
                    break;
                }
                Some(inst) => {
                    let next = self.predict_next(self.pc, inst);
                    self.fetchq.push_back(Slot::Inst { pc: self.pc, inst, predicted_next: next });
                    self.pc = next;
                    budget -= 1;
                }
            }
        }
    }

    // ---- squash ----

    /// Discard every instruction with seq >= `from_seq`, cancel their memory
    /// requests, clear this core's quarantined state and optionally redirect
    /// fetch.
    fn squash(&mut self, ms: &mut MemorySystem, from_seq: u64, redirect: Option<u32>) {
        ms.stats.squashes += 1;
        let removed = self.rob.split_off(&from_seq);
        let mut cancelled = std::collections::BTreeSet::new();
        for (_, e) in &removed {
            if e.inst.is_load() {
                self.lq_used -= 1;
                if e.issued_to_mem {
                    ms.stats.squashed_loads += 1;
                }
                if let Some(rid) = e.mem_req {
                    if let Some(b) = ms.cancel_load(rid) {
                        cancelled.insert(b);
                    }
                }
                // Fill already landed and evicted something: that is the
                // pollution this design measures.
                if e.state == Exec::Done && e.fill_evicted {
                    ms.stats.polluting_loads += 1;
                }
            }
            if e.inst.is_store() {
                self.sq_used -= 1;
            }
        }
        self.fetchq.clear();
        if let Some((rid, _)) = self.pending_fetch.take() {
            ms.stats.squashed_ifetches += 1;
            if let Some(b) = ms.cancel_ifetch(rid) {
                cancelled.insert(b);
            }
        }
        self.fetch_block = None;

        let surviving_guards = self.rob.values().filter(|e| e.inst.is_guard()).count();
        ms.squash_core(self.id, cancelled, surviving_guards);
        ms.cancel_walks(self.id, from_seq);

        self.producers.clear();
        for (&s, e) in &self.rob {
            if let Some(rd) = e.inst.dest_reg() {
                self.producers.insert(rd, s);
            }
        }
        if let Some(exc) = self.exception {
            if exc.seq >= from_seq {
                self.exception = None;
            }
        }
        debug_assert!(self.store_wait.map_or(true, |(s, _)| s < from_seq));
        if let Some(t) = redirect {
            self.pc = t;
        }
    }
}
