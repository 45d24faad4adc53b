//! The memory system: per-core L1D/L1I/L2, shared L3 with a full-map
//! directory, quarantine structures, and the request engine that moves
//! loads, instruction fetches, commit-time cache writes, stores,
//! invalidations and squash clears through per-component queues.
//!
//! Timing model: each cache component serves up to `ports` requests per
//! cycle from a FIFO queue (squash clears always first); a served request's
//! effects land `latency` cycles later. Memory is a pure latency adder with
//! unlimited bandwidth.
//!
//! Value model: architectural memory is authoritative and is mutated only
//! when a store commits. Stores invalidate every other copy before writing
//! and write through to all of their own levels, so every valid cache line
//! and quarantine entry holds bytes equal to architectural memory at all
//! times (the state scanner checks exactly that). MESI labels carry the
//! ownership protocol; data movement needs no separate write-back path.

pub mod cache;

use crate::config::{Mode, SimConfig};
use crate::precache::{IPreCache, PreCache, TlbArray};
use crate::sparse::SparseMem;
use crate::stats::Stats;
use cache::{CacheArray, CacheLine, Mesi};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

pub type ReqId = u64;

pub const PAGE_SHIFT: u32 = 12;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DirEntry {
    pub sharers: BTreeSet<usize>,
    /// M/E holder; implies `sharers == {owner}`.
    pub owner: Option<usize>,
}

/// Per-core private memory-side state.
#[derive(Debug)]
pub struct CoreMem {
    pub l1d: CacheArray,
    pub l1i: CacheArray,
    pub l2: CacheArray,
    pub vc: Option<CacheArray>,
    pub pre: PreCache,
    pub ipre: IPreCache,
    pub tlb: TlbArray,
    pub pretlb: TlbArray,
    /// Reverse-inclusive quarantine directories at the private L2.
    pub dir_d: BTreeSet<u32>,
    pub dir_i: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum ReqKind {
    Load { seq: u64, addr: u32, size: u8 },
    IFetch { guarded: bool },
    Stc { hit_level: u8, aborted: bool, acks: u32, held: Vec<(usize, u32)> },
    Store { seq: u64, addr: u32, value: u32, acks: u32 },
    Clear { blocks: BTreeSet<u32> },
    /// M/E -> S downgrade chain on behalf of `parent`.
    Downgrade { parent: ReqId, target: usize },
    /// Copy-removal chain on behalf of a committing store.
    Inval { parent: ReqId, target: usize },
}

#[derive(Debug)]
struct Req {
    core: usize,
    block: u32,
    kind: ReqKind,
    /// Walk position; selects the step run when service completes.
    stage: u8,
    /// Cancelled while in flight: remaining steps are suppressed in
    /// precache mode, fill-only (no delivery) in baseline mode.
    dead: bool,
    evicted_l1d: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StcStart {
    /// No quarantine entry left for the block; nothing to write.
    Noop,
    Started,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreStart {
    /// Own in-flight STC on the same block; retry next cycle.
    Busy,
    /// Completed immediately (owned M/E fast path).
    Done,
    Started,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Translation {
    Ready(u32),
    Walking,
}

pub struct MemorySystem {
    cfg: SimConfig,
    now: u64,
    pub mem: SparseMem,
    cores: Vec<CoreMem>,
    l3: CacheArray,
    dir: BTreeMap<u32, DirEntry>,
    /// Reverse-inclusive quarantine directories at the shared L3.
    l3_dir_d: BTreeSet<(u32, usize)>,
    l3_dir_i: BTreeSet<(u32, usize)>,
    /// Blocks whose exclusive-store transaction is between its directory
    /// snapshot and its write. Fills for them wait, or a racing acquirer
    /// could slip past the snapshot and keep a stale copy the directory
    /// never hears about.
    store_pending: BTreeSet<u32>,

    reqs: BTreeMap<ReqId, Req>,
    next_id: ReqId,
    queues: Vec<VecDeque<ReqId>>,
    due: BTreeSet<(u64, ReqId)>,
    locks: BTreeMap<(usize, u32), ReqId>,
    waiters: BTreeMap<(usize, u32), VecDeque<ReqId>>,

    /// Pending page-table walks per core: vpn -> (owner seq, done cycle).
    walks: Vec<BTreeMap<u32, (u64, u64)>>,

    pub stats: Stats,
    /// (core, seq, value, fill evicted an L1D line); the eviction flag lets
    /// the pipeline count pollution for loads squashed after completion.
    pub load_done: Vec<(usize, u64, u32, bool)>,
    pub ifetch_done: Vec<(usize, u32)>,
    pub store_done: Vec<(usize, u64)>,
    outstanding_loads: Vec<u64>,
}

impl MemorySystem {
    pub fn new(cfg: &SimConfig, image: SparseMem) -> Self {
        let line = cfg.line_size;
        let cores = (0..cfg.cores as usize)
            .map(|_| CoreMem {
                l1d: CacheArray::new(cfg.l1.sets(line), cfg.l1.ways, line),
                l1i: CacheArray::new(cfg.l1.sets(line), cfg.l1.ways, line),
                l2: CacheArray::new(cfg.l2.sets(line), cfg.l2.ways, line),
                vc: cfg
                    .victim_cache
                    .then(|| CacheArray::new(1, cfg.victim_cache_blocks, line)),
                pre: PreCache::new(cfg.precache_entries()),
                ipre: IPreCache::new(cfg.iprecache_entries),
                tlb: TlbArray::new(cfg.tlb_entries),
                pretlb: TlbArray::new(cfg.pretlb_entries),
                dir_d: BTreeSet::new(),
                dir_i: BTreeSet::new(),
            })
            .collect::<Vec<_>>();
        let n = cfg.cores as usize;
        Self {
            cfg: cfg.clone(),
            now: 0,
            mem: image,
            cores,
            l3: CacheArray::new(cfg.l3.sets(line), cfg.l3.ways, line),
            dir: BTreeMap::new(),
            l3_dir_d: BTreeSet::new(),
            l3_dir_i: BTreeSet::new(),
            store_pending: BTreeSet::new(),
            reqs: BTreeMap::new(),
            next_id: 1,
            queues: vec![VecDeque::new(); 3 * n + 1],
            due: BTreeSet::new(),
            locks: BTreeMap::new(),
            waiters: BTreeMap::new(),
            walks: vec![BTreeMap::new(); n],
            stats: Stats::default(),
            load_done: Vec::new(),
            ifetch_done: Vec::new(),
            store_done: Vec::new(),
            outstanding_loads: vec![0; n],
        }
    }

    fn comp_l1d(&self, c: usize) -> usize {
        3 * c
    }
    fn comp_l1i(&self, c: usize) -> usize {
        3 * c + 1
    }
    fn comp_l2(&self, c: usize) -> usize {
        3 * c + 2
    }
    fn comp_l3(&self) -> usize {
        3 * self.cores.len()
    }

    fn comp_latency(&self, comp: usize) -> u64 {
        if comp == self.comp_l3() {
            self.cfg.l3.latency
        } else {
            match comp % 3 {
                0 | 1 => self.cfg.l1.latency,
                _ => self.cfg.l2.latency,
            }
        }
    }

    fn comp_ports(&self, comp: usize) -> u32 {
        if comp == self.comp_l3() {
            self.cfg.l3.ports
        } else {
            match comp % 3 {
                0 | 1 => self.cfg.l1.ports,
                _ => self.cfg.l2.ports,
            }
        }
    }

    pub fn block_of(&self, addr: u32) -> u32 {
        self.cfg.block_of(addr)
    }

    fn line_bytes(&self, block: u32) -> Vec<u8> {
        self.mem.read_range(block, self.cfg.line_size)
    }

    fn value_from(bytes: &[u8], addr: u32, size: u8, line: u32) -> u32 {
        let off = (addr & (line - 1)) as usize;
        match size {
            1 => bytes[off] as u32,
            _ => {
                // Misaligned wrong-path reads can poke past the line end;
                // wrap inside the line so the transient value stays
                // deterministic. Such accesses fault before committing.
                let b = |i: usize| bytes[(off + i) % bytes.len()] as u32;
                b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24)
            }
        }
    }

    // ---- request plumbing ----

    fn alloc(&mut self, core: usize, block: u32, kind: ReqKind, stage: u8) -> ReqId {
        let id = self.next_id;
        self.next_id += 1;
        self.reqs
            .insert(id, Req { core, block, kind, stage, dead: false, evicted_l1d: false });
        id
    }

    fn enqueue(&mut self, comp: usize, id: ReqId) {
        self.queues[comp].push_back(id);
    }

    fn schedule(&mut self, at: u64, id: ReqId) {
        self.due.insert((at, id));
    }

    fn finish(&mut self, id: ReqId) -> Req {
        let req = self.reqs.remove(&id).expect("live req");
        if let ReqKind::Load { .. } = req.kind {
            self.outstanding_loads[req.core] -= 1;
        }
        req
    }

    /// One memory-system step per machine cycle: finish page walks, run due
    /// effects, then start service on queued requests.
    pub fn cycle(&mut self, now: u64) {
        self.now = now;
        for c in 0..self.cores.len() {
            let done: Vec<(u32, u64)> = self.walks[c]
                .iter()
                .filter(|&(_, &(_, d))| d <= now)
                .map(|(&vpn, &(seq, _))| (vpn, seq))
                .collect();
            for (vpn, seq) in done {
                self.walks[c].remove(&vpn);
                match self.cfg.mode {
                    Mode::Precache => self.cores[c].pretlb.insert(vpn, vpn, seq),
                    Mode::Baseline => self.cores[c].tlb.insert(vpn, vpn, seq),
                }
            }
        }
        let ready: Vec<(u64, ReqId)> = self.due.range(..=(now, ReqId::MAX)).copied().collect();
        for key in &ready {
            self.due.remove(key);
        }
        for (_, id) in ready {
            if self.reqs.contains_key(&id) {
                self.step(id);
            }
        }
        for comp in 0..self.queues.len() {
            let mut budget = self.comp_ports(comp);
            while budget > 0 && !self.queues[comp].is_empty() {
                let pos = self.queues[comp]
                    .iter()
                    .position(|id| {
                        matches!(self.reqs.get(id).map(|r| &r.kind), Some(ReqKind::Clear { .. }))
                    })
                    .unwrap_or(0);
                let id = self.queues[comp].remove(pos).unwrap();
                if !self.reqs.contains_key(&id) {
                    continue;
                }
                let at = now + self.comp_latency(comp);
                self.schedule(at, id);
                budget -= 1;
            }
        }
    }

    fn try_lock(&mut self, comp: usize, set: u32, id: ReqId) -> bool {
        match self.locks.get(&(comp, set)) {
            None => {
                self.locks.insert((comp, set), id);
                if let ReqKind::Stc { held, .. } = &mut self.reqs.get_mut(&id).unwrap().kind {
                    held.push((comp, set));
                }
                true
            }
            Some(&owner) if owner == id => true,
            Some(_) => {
                self.waiters.entry((comp, set)).or_default().push_back(id);
                false
            }
        }
    }

    fn release_locks(&mut self, id: ReqId) {
        let held = match &mut self.reqs.get_mut(&id).unwrap().kind {
            ReqKind::Stc { held, .. } => std::mem::take(held),
            _ => Vec::new(),
        };
        for key in held {
            assert_eq!(self.locks.remove(&key), Some(id));
            if let Some(q) = self.waiters.get_mut(&key) {
                while let Some(w) = q.pop_front() {
                    if self.reqs.contains_key(&w) {
                        let at = self.now + 1;
                        self.schedule(at, w);
                        break;
                    }
                }
            }
            if self.waiters.get(&key).is_some_and(|q| q.is_empty()) {
                self.waiters.remove(&key);
            }
        }
    }

    fn locked_by_other(&self, comp: usize, set: u32, id: ReqId) -> bool {
        self.locks.get(&(comp, set)).is_some_and(|&o| o != id)
    }

    // ---- loads ----

    pub fn issue_load(&mut self, core: usize, seq: u64, addr: u32, size: u8) -> ReqId {
        let block = self.block_of(addr);
        let id = self.alloc(core, block, ReqKind::Load { seq, addr, size }, 0);
        let comp = self.comp_l1d(core);
        self.enqueue(comp, id);
        self.outstanding_loads[core] += 1;
        let out = self.outstanding_loads[core];
        self.stats.max_outstanding_loads = self.stats.max_outstanding_loads.max(out);
        id
    }

    /// Cancel an in-flight load at squash. Precache mode drops it from the
    /// access lists entirely and reports its block for the clear walk;
    /// baseline mode lets the fill land and only suppresses delivery.
    pub fn cancel_load(&mut self, id: ReqId) -> Option<u32> {
        let Some(req) = self.reqs.get_mut(&id) else {
            return None;
        };
        req.dead = true;
        match self.cfg.mode {
            Mode::Precache => {
                let block = req.block;
                for q in &mut self.queues {
                    q.retain(|&x| x != id);
                }
                Some(block)
            }
            Mode::Baseline => None,
        }
    }

    fn step_load(&mut self, id: ReqId) {
        let (core, block, seq, addr, size, stage, dead) = {
            let r = &self.reqs[&id];
            let ReqKind::Load { seq, addr, size } = r.kind else { unreachable!() };
            (r.core, r.block, seq, addr, size, r.stage, r.dead)
        };
        let precache = self.cfg.mode == Mode::Precache;
        if dead && precache {
            self.finish(id);
            return;
        }
        let line = self.cfg.line_size;
        match stage {
            0 => {
                self.stats.l1d_accesses += 1;
                if precache {
                    if let Some(e) = self.cores[core].pre.lookup(block) {
                        self.stats.l1d_hits += 1;
                        let v = Self::value_from(&e.data, addr, size, line);
                        self.complete_load(id, core, seq, v);
                        return;
                    }
                }
                if let Some(l) = self.cores[core].l1d.lookup(block) {
                    self.stats.l1d_hits += 1;
                    let v = Self::value_from(&l.data, addr, size, line);
                    if !precache {
                        self.cores[core].l1d.touch(block);
                    }
                    self.complete_load(id, core, seq, v);
                    return;
                }
                if self.cores[core].vc.as_ref().is_some_and(|vc| vc.contains(block)) {
                    // Victim-cache hit swaps the line back into L1.
                    self.stats.l1d_hits += 1;
                    let lv = self.cores[core].vc.as_mut().unwrap().remove(block).unwrap();
                    let v = Self::value_from(&lv.data, addr, size, line);
                    self.insert_l1d(core, block, lv.mesi, lv.data, lv.inserter);
                    self.complete_load(id, core, seq, v);
                    return;
                }
                self.reqs.get_mut(&id).unwrap().stage = 1;
                let comp = self.comp_l2(core);
                self.enqueue(comp, id);
            }
            1 => {
                self.stats.l2_accesses += 1;
                if precache {
                    self.cores[core].dir_d.insert(block);
                }
                if self.cores[core].l2.contains(block) {
                    self.stats.l2_hits += 1;
                    let bytes = self.cores[core].l2.lookup(block).unwrap().data.clone();
                    let v = Self::value_from(&bytes, addr, size, line);
                    if precache {
                        self.fill_pre(core, block, bytes, 1, seq);
                    } else {
                        self.cores[core].l2.touch(block);
                        self.fill_baseline(id, core, block, 1, seq);
                    }
                    self.complete_load(id, core, seq, v);
                    return;
                }
                self.reqs.get_mut(&id).unwrap().stage = 2;
                let comp = self.comp_l3();
                self.enqueue(comp, id);
            }
            2 => {
                if self.store_pending.contains(&block) {
                    let at = self.now + 1;
                    self.schedule(at, id);
                    return;
                }
                self.stats.l3_accesses += 1;
                if precache {
                    self.l3_dir_d.insert((block, core));
                }
                if self.l3.contains(block) {
                    self.stats.l3_hits += 1;
                    let bytes = self.l3.lookup(block).unwrap().data.clone();
                    let v = Self::value_from(&bytes, addr, size, line);
                    if precache {
                        self.fill_pre(core, block, bytes, 2, seq);
                    } else {
                        self.l3.touch(block);
                        self.fill_baseline(id, core, block, 2, seq);
                    }
                    self.complete_load(id, core, seq, v);
                    return;
                }
                self.reqs.get_mut(&id).unwrap().stage = 3;
                let at = self.now + self.cfg.mem_latency;
                self.schedule(at, id);
            }
            _ => {
                if self.store_pending.contains(&block) {
                    let at = self.now + 1;
                    self.schedule(at, id);
                    return;
                }
                let bytes = self.line_bytes(block);
                let v = Self::value_from(&bytes, addr, size, line);
                if precache {
                    self.fill_pre(core, block, bytes, 3, seq);
                } else {
                    self.fill_baseline(id, core, block, 3, seq);
                }
                self.complete_load(id, core, seq, v);
            }
        }
    }

    /// Allocate a quarantine entry for a missed load. A full quarantine
    /// evicts its oldest unlocked entry; if even that is impossible the
    /// fill is dropped and only the delivered value survives.
    fn fill_pre(&mut self, core: usize, block: u32, bytes: Vec<u8>, level: u8, seq: u64) {
        if !self.cores[core].pre.has(block) && self.cores[core].pre.full() {
            match self.cores[core].pre.evict_oldest_unlocked() {
                Some(victim) => {
                    self.cores[core].dir_d.remove(&victim);
                    self.l3_dir_d.remove(&(victim, core));
                }
                None => {
                    self.cores[core].dir_d.remove(&block);
                    self.l3_dir_d.remove(&(block, core));
                    return;
                }
            }
        }
        self.cores[core].pre.fill(block, bytes, level, seq);
    }

    fn complete_load(&mut self, id: ReqId, core: usize, seq: u64, value: u32) {
        let req = self.finish(id);
        if req.dead {
            if req.evicted_l1d {
                self.stats.polluting_loads += 1;
            }
            return;
        }
        self.load_done.push((core, seq, value, req.evicted_l1d));
    }

    /// Baseline fill: bring the block into every level it missed, with
    /// coherence acquisition at the LLC. `hit_level` is 1..=3.
    fn fill_baseline(&mut self, id: ReqId, core: usize, block: u32, hit_level: u8, seq: u64) {
        let st = if hit_level == 1 {
            self.cores[core].l2.lookup(block).expect("hit line").mesi
        } else {
            self.acquire_shared(core, block)
        };
        let tag = Some((core, seq));
        if hit_level == 3 {
            let data = self.line_bytes(block);
            if let Some(v) = self.l3.insert(block, st, data, tag) {
                self.evict_l3_line(v);
            }
        }
        if hit_level >= 2 {
            let data = self.l3.lookup(block).unwrap().data.clone();
            if let Some(v) = self.cores[core].l2.insert(block, st, data, tag) {
                self.evict_l2_line(core, v);
            }
        }
        let data = self.cores[core].l2.lookup(block).unwrap().data.clone();
        if self.insert_l1d(core, block, st, data, tag) {
            self.reqs.get_mut(&id).unwrap().evicted_l1d = true;
        }
    }

    /// Insert into L1D, spilling any victim to the victim cache when one is
    /// configured. Returns whether a line was displaced.
    fn insert_l1d(
        &mut self,
        core: usize,
        block: u32,
        st: Mesi,
        data: Vec<u8>,
        tag: Option<(usize, u64)>,
    ) -> bool {
        match self.cores[core].l1d.insert(block, st, data, tag) {
            Some(v) => {
                if let Some(vc) = &mut self.cores[core].vc {
                    vc.insert(v.block, v.mesi, v.data, v.inserter);
                }
                true
            }
            None => false,
        }
    }

    /// Consult the LLC directory for a read acquisition: downgrade a remote
    /// M/E owner synchronously, return the state the new copies get.
    fn acquire_shared(&mut self, core: usize, block: u32) -> Mesi {
        let remote_owner = self
            .dir
            .get(&block)
            .and_then(|d| d.owner)
            .filter(|&o| o != core);
        if let Some(owner) = remote_owner {
            self.downgrade_core(owner, block);
        }
        let d = self.dir.entry(block).or_default();
        let sole = d.sharers.is_empty() || d.sharers == BTreeSet::from([core]);
        d.sharers.insert(core);
        if sole {
            d.owner = Some(core);
            Mesi::E
        } else {
            d.owner = None;
            Mesi::S
        }
    }

    fn downgrade_core(&mut self, owner: usize, block: u32) {
        let cm = &mut self.cores[owner];
        for arr in [&mut cm.l1d, &mut cm.l1i, &mut cm.l2] {
            if let Some(l) = arr.lookup_mut(block) {
                l.mesi = Mesi::S;
            }
        }
        if let Some(l) = self.l3.lookup_mut(block) {
            l.mesi = Mesi::S;
        }
        if let Some(d) = self.dir.get_mut(&block) {
            d.owner = None;
        }
    }

    // ---- instruction fetches ----

    pub fn issue_ifetch(&mut self, core: usize, block: u32, guarded: bool) -> ReqId {
        let id = self.alloc(core, block, ReqKind::IFetch { guarded }, 0);
        let comp = self.comp_l1i(core);
        self.enqueue(comp, id);
        id
    }

    pub fn cancel_ifetch(&mut self, id: ReqId) -> Option<u32> {
        let Some(req) = self.reqs.get_mut(&id) else {
            return None;
        };
        req.dead = true;
        match self.cfg.mode {
            Mode::Precache => {
                let block = req.block;
                for q in &mut self.queues {
                    q.retain(|&x| x != id);
                }
                Some(block)
            }
            Mode::Baseline => None,
        }
    }

    fn step_ifetch(&mut self, id: ReqId) {
        let (core, block, guarded, stage, dead) = {
            let r = &self.reqs[&id];
            let ReqKind::IFetch { guarded } = r.kind else { unreachable!() };
            (r.core, r.block, guarded, r.stage, r.dead)
        };
        let precache = self.cfg.mode == Mode::Precache;
        if dead && precache {
            self.finish(id);
            return;
        }
        let quarantine = precache && guarded;
        match stage {
            0 => {
                self.stats.l1i_accesses += 1;
                if self.cores[core].l1i.contains(block) {
                    self.stats.l1i_hits += 1;
                    self.cores[core].l1i.touch(block);
                    self.complete_ifetch(id, core, block);
                    return;
                }
                if precache && self.cores[core].ipre.lookup(block).is_some() {
                    self.stats.l1i_hits += 1;
                    self.complete_ifetch(id, core, block);
                    return;
                }
                self.reqs.get_mut(&id).unwrap().stage = 1;
                let comp = self.comp_l2(core);
                self.enqueue(comp, id);
            }
            1 => {
                self.stats.l2_accesses += 1;
                if quarantine {
                    self.cores[core].dir_i.insert(block);
                }
                if self.cores[core].l2.contains(block) {
                    self.stats.l2_hits += 1;
                    self.finish_ifetch_fill(id, core, block, 1, quarantine);
                    return;
                }
                self.reqs.get_mut(&id).unwrap().stage = 2;
                let comp = self.comp_l3();
                self.enqueue(comp, id);
            }
            2 => {
                if self.store_pending.contains(&block) {
                    let at = self.now + 1;
                    self.schedule(at, id);
                    return;
                }
                self.stats.l3_accesses += 1;
                if quarantine {
                    self.l3_dir_i.insert((block, core));
                }
                if self.l3.contains(block) {
                    self.stats.l3_hits += 1;
                    self.finish_ifetch_fill(id, core, block, 2, quarantine);
                    return;
                }
                self.reqs.get_mut(&id).unwrap().stage = 3;
                let at = self.now + self.cfg.mem_latency;
                self.schedule(at, id);
            }
            _ => {
                if self.store_pending.contains(&block) {
                    let at = self.now + 1;
                    self.schedule(at, id);
                    return;
                }
                self.finish_ifetch_fill(id, core, block, 3, quarantine);
            }
        }
    }

    fn finish_ifetch_fill(
        &mut self,
        id: ReqId,
        core: usize,
        block: u32,
        hit_level: u8,
        quarantine: bool,
    ) {
        if quarantine {
            let bytes = match hit_level {
                1 => self.cores[core].l2.lookup(block).unwrap().data.clone(),
                2 => self.l3.lookup(block).unwrap().data.clone(),
                _ => self.line_bytes(block),
            };
            if !self.cores[core].ipre.fill(block, bytes) {
                // Every covering guard already committed; the fetch turned
                // out non-speculative after all.
                self.remove_i_records(core, block);
                self.fill_instr_levels(core, block, hit_level);
            }
        } else {
            self.fill_instr_levels(core, block, hit_level);
        }
        self.complete_ifetch(id, core, block);
    }

    /// Fill iL1 (and the levels below that missed) for a non-speculative
    /// fetch.
    fn fill_instr_levels(&mut self, core: usize, block: u32, hit_level: u8) {
        let st = if hit_level == 1 {
            self.cores[core].l2.lookup(block).expect("hit line").mesi
        } else {
            self.acquire_shared(core, block)
        };
        if hit_level == 3 {
            let data = self.line_bytes(block);
            if let Some(v) = self.l3.insert(block, st, data, None) {
                self.evict_l3_line(v);
            }
        }
        if hit_level >= 2 {
            let data = self.l3.lookup(block).unwrap().data.clone();
            if let Some(v) = self.cores[core].l2.insert(block, st, data, None) {
                self.evict_l2_line(core, v);
            }
        } else {
            self.cores[core].l2.touch(block);
        }
        let data = self.cores[core].l2.lookup(block).unwrap().data.clone();
        self.cores[core].l1i.insert(block, st, data, None);
    }

    fn complete_ifetch(&mut self, id: ReqId, core: usize, block: u32) {
        let req = self.finish(id);
        if !req.dead {
            self.ifetch_done.push((core, block));
        }
    }

    /// Guard committed: release its quarantined instruction blocks into the
    /// instruction caches.
    pub fn ipre_commit_guard(&mut self, core: usize) {
        if self.cores[core].ipre.guard_windows() == 0 {
            return;
        }
        let freed = self.cores[core].ipre.on_guard_commit();
        for e in freed {
            self.remove_i_records(core, e.block);
            let hit_level = if self.cores[core].l2.contains(e.block) {
                1
            } else if self.l3.contains(e.block) {
                2
            } else {
                3
            };
            self.fill_instr_levels(core, e.block, hit_level);
        }
    }

    fn remove_i_records(&mut self, core: usize, block: u32) {
        self.cores[core].dir_i.remove(&block);
        self.l3_dir_i.remove(&(block, core));
    }

    // ---- STC: commit-time transfer of a quarantined block into the caches ----

    pub fn start_stc(&mut self, core: usize, block: u32) -> StcStart {
        let Some((hit_level, locked)) =
            self.cores[core].pre.lookup(block).map(|e| (e.hit_level, e.stc_locked))
        else {
            self.stats.stc_noop += 1;
            if self.cores[core].l1d.contains(block) {
                self.cores[core].l1d.touch(block);
            }
            return StcStart::Noop;
        };
        if locked {
            // A same-block load already committed and its transfer is in
            // flight; this commit rides along.
            self.stats.stc_noop += 1;
            return StcStart::Noop;
        }
        let id = self.alloc(
            core,
            block,
            ReqKind::Stc { hit_level, aborted: false, acks: 0, held: Vec::new() },
            0,
        );
        let e = self.cores[core].pre.lookup_mut(block).unwrap();
        e.stc_locked = true;
        e.stc_req = Some(id);
        let comp = self.comp_l1d(core);
        self.enqueue(comp, id);
        StcStart::Started
    }

    /// An invalidation consumed the quarantine entry out from under its STC.
    fn abort_stc(&mut self, id: ReqId) {
        if let Some(r) = self.reqs.get_mut(&id) {
            if let ReqKind::Stc { aborted, .. } = &mut r.kind {
                *aborted = true;
                let at = self.now + 1;
                self.schedule(at, id);
            }
        }
    }

    fn step_stc(&mut self, id: ReqId) {
        let (core, block, hit_level, aborted, acks, stage) = {
            let r = &self.reqs[&id];
            let ReqKind::Stc { hit_level, aborted, acks, .. } = r.kind else { unreachable!() };
            (r.core, r.block, hit_level, aborted, acks, r.stage)
        };
        if aborted {
            self.release_locks(id);
            self.stats.stc_aborted += 1;
            self.finish(id);
            return;
        }
        match stage {
            0 => {
                let set = self.cores[core].l1d.set_index(block);
                let comp = self.comp_l1d(core);
                if !self.try_lock(comp, set, id) {
                    return;
                }
                self.reqs.get_mut(&id).unwrap().stage = 1;
                let comp = self.comp_l2(core);
                self.enqueue(comp, id);
            }
            1 => {
                let set = self.cores[core].l2.set_index(block);
                let comp = self.comp_l2(core);
                if !self.try_lock(comp, set, id) {
                    return;
                }
                if hit_level == 1 {
                    self.cores[core].dir_d.remove(&block);
                    self.cores[core].l2.touch(block);
                    self.stc_write(id, core, block, hit_level);
                    return;
                }
                self.reqs.get_mut(&id).unwrap().stage = 2;
                let comp = self.comp_l3();
                self.enqueue(comp, id);
            }
            2 => {
                let set = self.l3.set_index(block);
                let comp = self.comp_l3();
                if !self.try_lock(comp, set, id) {
                    return;
                }
                if hit_level == 2 {
                    self.l3.touch(block);
                }
                let remote_owner = self
                    .dir
                    .get(&block)
                    .and_then(|d| d.owner)
                    .filter(|&o| o != core);
                if let Some(owner) = remote_owner {
                    if let ReqKind::Stc { acks, .. } = &mut self.reqs.get_mut(&id).unwrap().kind {
                        *acks = 1;
                    }
                    self.reqs.get_mut(&id).unwrap().stage = 3;
                    let did =
                        self.alloc(core, block, ReqKind::Downgrade { parent: id, target: owner }, 1);
                    let comp = self.comp_l2(owner);
                    self.enqueue(comp, did);
                    return;
                }
                self.stc_write(id, core, block, hit_level);
            }
            _ => {
                if acks == 0 {
                    self.stc_write(id, core, block, hit_level);
                }
            }
        }
    }

    /// The atomic write step: move the quarantined bytes into every level
    /// the original miss traversed, clean up the block's quarantine records,
    /// release locks, retire the entry.
    fn stc_write(&mut self, id: ReqId, core: usize, block: u32, hit_level: u8) {
        let entry = self.cores[core].pre.remove(block).expect("locked entry");
        let mut data = entry.data;
        if self.cfg.corrupt_stc {
            data[0] ^= 0xff;
        }
        let st = if hit_level == 1 {
            self.cores[core].l2.lookup(block).expect("hit level line").mesi
        } else {
            let d = self.dir.entry(block).or_default();
            let sole = d.sharers.is_empty() || d.sharers == BTreeSet::from([core]);
            d.sharers.insert(core);
            if sole {
                d.owner = Some(core);
                Mesi::E
            } else {
                d.owner = None;
                Mesi::S
            }
        };
        if hit_level == 3 {
            if let Some(v) = self.l3.insert(block, st, data.clone(), None) {
                self.evict_l3_line(v);
            }
        } else if hit_level == 2 {
            if let Some(l) = self.l3.lookup_mut(block) {
                l.mesi = st;
            }
        }
        if hit_level >= 2 {
            self.l3_dir_d.remove(&(block, core));
            if let Some(v) = self.cores[core].l2.insert(block, st, data.clone(), None) {
                self.evict_l2_line(core, v);
            }
            self.cores[core].dir_d.remove(&block);
        }
        self.insert_l1d(core, block, st, data, None);
        self.release_locks(id);
        self.stats.stc_written += 1;
        self.finish(id);
    }

    // ---- stores ----

    pub fn start_store(&mut self, core: usize, seq: u64, addr: u32, value: u32) -> StoreStart {
        let block = self.block_of(addr);
        if self.cores[core].pre.lookup(block).is_some_and(|e| e.stc_locked) {
            return StoreStart::Busy;
        }
        if self.cores[core].pre.remove(block).is_some() {
            self.cores[core].dir_d.remove(&block);
            self.l3_dir_d.remove(&(block, core));
        }
        let owned = self.cores[core]
            .l1d
            .lookup(block)
            .is_some_and(|l| matches!(l.mesi, Mesi::M | Mesi::E));
        let foreign_records = self
            .l3_dir_d
            .iter()
            .chain(self.l3_dir_i.iter())
            .any(|&(b, c)| b == block && c != core);
        if owned && !foreign_records {
            self.store_write(core, addr, value);
            return StoreStart::Done;
        }
        let id = self.alloc(core, block, ReqKind::Store { seq, addr, value, acks: 0 }, 2);
        let comp = self.comp_l3();
        self.enqueue(comp, id);
        StoreStart::Started
    }

    fn step_store(&mut self, id: ReqId) {
        let (core, block, stage, acks) = {
            let r = &self.reqs[&id];
            let ReqKind::Store { acks, .. } = r.kind else { unreachable!() };
            (r.core, r.block, r.stage, acks)
        };
        match stage {
            2 => {
                if self.store_pending.contains(&block) {
                    let at = self.now + 1;
                    self.schedule(at, id);
                    return;
                }
                self.store_pending.insert(block);
                let mut targets: BTreeSet<usize> = self
                    .dir
                    .get(&block)
                    .map(|d| d.sharers.iter().copied().filter(|&c| c != core).collect())
                    .unwrap_or_default();
                for &(b, c) in self.l3_dir_d.iter().chain(self.l3_dir_i.iter()) {
                    if b == block && c != core {
                        targets.insert(c);
                    }
                }
                let n = targets.len() as u32;
                if let ReqKind::Store { acks, .. } = &mut self.reqs.get_mut(&id).unwrap().kind {
                    *acks = n;
                }
                self.reqs.get_mut(&id).unwrap().stage = 3;
                if n == 0 {
                    self.try_store_write(id);
                    return;
                }
                let chains: Vec<(ReqId, usize)> = targets
                    .into_iter()
                    .map(|t| {
                        (self.alloc(core, block, ReqKind::Inval { parent: id, target: t }, 1), t)
                    })
                    .collect();
                for (cid, t) in chains {
                    let comp = self.comp_l2(t);
                    self.enqueue(comp, cid);
                }
            }
            _ => {
                if acks == 0 {
                    self.try_store_write(id);
                }
            }
        }
    }

    fn try_store_write(&mut self, id: ReqId) {
        let (core, block, addr, value) = {
            let r = &self.reqs[&id];
            let ReqKind::Store { addr, value, .. } = r.kind else { unreachable!() };
            (r.core, r.block, addr, value)
        };
        let gates = [
            (self.comp_l1d(core), self.cores[core].l1d.set_index(block)),
            (self.comp_l2(core), self.cores[core].l2.set_index(block)),
            (self.comp_l3(), self.l3.set_index(block)),
        ];
        if gates.iter().any(|&(c, s)| self.locked_by_other(c, s, id)) {
            let at = self.now + 1;
            self.schedule(at, id);
            return;
        }
        self.store_write(core, addr, value);
        self.store_pending.remove(&block);
        let r = self.finish(id);
        let ReqKind::Store { seq, .. } = r.kind else { unreachable!() };
        self.store_done.push((core, seq));
    }

    /// The committed store's atomic write: memory first, then M copies at
    /// every own level (write-allocating), directory ownership claimed.
    fn store_write(&mut self, core: usize, addr: u32, value: u32) {
        let block = self.block_of(addr);
        self.mem.write_u32(addr, value);
        let data = self.line_bytes(block);
        if let Some(v) = self.l3.insert(block, Mesi::M, data.clone(), None) {
            self.evict_l3_line(v);
        }
        if let Some(v) = self.cores[core].l2.insert(block, Mesi::M, data.clone(), None) {
            self.evict_l2_line(core, v);
        }
        self.insert_l1d(core, block, Mesi::M, data, None);
        let d = self.dir.entry(block).or_default();
        d.sharers = BTreeSet::from([core]);
        d.owner = Some(core);
    }

    // ---- invalidation / downgrade chains ----

    fn step_chain(&mut self, id: ReqId) {
        let (block, stage, parent, target, is_inval) = {
            let r = &self.reqs[&id];
            match r.kind {
                ReqKind::Downgrade { parent, target } => (r.block, r.stage, parent, target, false),
                ReqKind::Inval { parent, target } => (r.block, r.stage, parent, target, true),
                _ => unreachable!(),
            }
        };
        match stage {
            1 => {
                if is_inval {
                    self.cores[target].l2.remove(block);
                    if self.cores[target].dir_d.contains(&block) {
                        self.pc_invalidate(target, block);
                    }
                    if self.cores[target].dir_i.remove(&block) {
                        self.l3_dir_i.remove(&(block, target));
                        self.cores[target].ipre.invalidate(block);
                    }
                } else if let Some(l) = self.cores[target].l2.lookup_mut(block) {
                    l.mesi = Mesi::S;
                }
                self.reqs.get_mut(&id).unwrap().stage = 0;
                let comp = self.comp_l1d(target);
                self.enqueue(comp, id);
            }
            _ => {
                if is_inval {
                    self.cores[target].l1d.remove(block);
                    self.cores[target].l1i.remove(block);
                    if let Some(vc) = &mut self.cores[target].vc {
                        vc.remove(block);
                    }
                    self.pc_invalidate(target, block);
                    if self.cores[target].dir_i.remove(&block) {
                        self.l3_dir_i.remove(&(block, target));
                        self.cores[target].ipre.invalidate(block);
                    }
                    if let Some(d) = self.dir.get_mut(&block) {
                        d.sharers.remove(&target);
                        if d.owner == Some(target) {
                            d.owner = None;
                            if let Some(l) = self.l3.lookup_mut(block) {
                                l.mesi = Mesi::S;
                            }
                        }
                    }
                } else {
                    let cm = &mut self.cores[target];
                    for arr in [&mut cm.l1d, &mut cm.l1i] {
                        if let Some(l) = arr.lookup_mut(block) {
                            l.mesi = Mesi::S;
                        }
                    }
                    if let Some(l) = self.l3.lookup_mut(block) {
                        l.mesi = Mesi::S;
                    }
                    if let Some(d) = self.dir.get_mut(&block) {
                        d.owner = None;
                    }
                }
                self.finish(id);
                self.ack_parent(parent);
            }
        }
    }

    fn ack_parent(&mut self, parent: ReqId) {
        let Some(r) = self.reqs.get_mut(&parent) else {
            return;
        };
        match &mut r.kind {
            ReqKind::Stc { acks, .. } | ReqKind::Store { acks, .. } => {
                *acks -= 1;
                if *acks == 0 {
                    let at = self.now + 1;
                    self.schedule(at, parent);
                }
            }
            _ => {}
        }
    }

    /// Erase a core's quarantine entry for a block (eviction or remote
    /// store), aborting its in-flight STC if one exists. Directory records
    /// along the path go with it.
    fn pc_invalidate(&mut self, core: usize, block: u32) {
        if let Some(e) = self.cores[core].pre.remove(block) {
            if let Some(stc) = e.stc_req {
                self.abort_stc(stc);
            }
        }
        self.cores[core].dir_d.remove(&block);
        self.l3_dir_d.remove(&(block, core));
    }

    // ---- evictions ----

    /// Back-invalidate after an L2 eviction: the core's L1 copies go, and
    /// any quarantined copy above this L2 is erased via the directories.
    fn evict_l2_line(&mut self, core: usize, victim: CacheLine) {
        let block = victim.block;
        self.cores[core].l1d.remove(block);
        self.cores[core].l1i.remove(block);
        if let Some(vc) = &mut self.cores[core].vc {
            vc.remove(block);
        }
        if self.cores[core].dir_d.contains(&block) {
            self.pc_invalidate(core, block);
        }
        if self.cores[core].dir_i.remove(&block) {
            self.l3_dir_i.remove(&(block, core));
            self.cores[core].ipre.invalidate(block);
        }
        if let Some(d) = self.dir.get_mut(&block) {
            d.sharers.remove(&core);
            if d.owner == Some(core) {
                d.owner = None;
                if let Some(l) = self.l3.lookup_mut(block) {
                    l.mesi = Mesi::S;
                }
            }
            if d.sharers.is_empty() {
                self.dir.remove(&block);
            }
        }
    }

    /// Inclusive L3 eviction: every core's copies and quarantine state for
    /// the victim are invalidated.
    fn evict_l3_line(&mut self, victim: CacheLine) {
        let block = victim.block;
        for c in 0..self.cores.len() {
            self.cores[c].l1d.remove(block);
            self.cores[c].l1i.remove(block);
            self.cores[c].l2.remove(block);
            if let Some(vc) = &mut self.cores[c].vc {
                vc.remove(block);
            }
            if self.cores[c].dir_d.contains(&block) || self.l3_dir_d.contains(&(block, c)) {
                self.pc_invalidate(c, block);
            }
            if self.cores[c].dir_i.remove(&block) | self.l3_dir_i.remove(&(block, c)) {
                self.cores[c].ipre.invalidate(block);
            }
        }
        self.dir.remove(&block);
    }

    // ---- squash clear ----

    /// Squash-side memory work for a core: blanket-clears the instruction
    /// quarantine and speculative TLB immediately, then launches the
    /// prioritized clear walk covering erased and cancelled blocks.
    pub fn squash_core(
        &mut self,
        core: usize,
        cancelled_blocks: BTreeSet<u32>,
        surviving_guards: usize,
    ) {
        if self.cfg.mode != Mode::Precache {
            return;
        }
        let mut blocks = cancelled_blocks;
        blocks.extend(self.cores[core].ipre.clear(surviving_guards));
        self.cores[core].pretlb.clear();
        let id = self.alloc(core, 0, ReqKind::Clear { blocks }, 0);
        let comp = self.comp_l1d(core);
        self.enqueue(comp, id);
    }

    fn step_clear(&mut self, id: ReqId) {
        let (core, stage) = {
            let r = &self.reqs[&id];
            (r.core, r.stage)
        };
        match stage {
            0 => {
                let erased = self.cores[core].pre.clear_unlocked();
                if let ReqKind::Clear { blocks } = &mut self.reqs.get_mut(&id).unwrap().kind {
                    blocks.extend(erased);
                }
                self.reqs.get_mut(&id).unwrap().stage = 1;
                let comp = self.comp_l2(core);
                self.enqueue(comp, id);
            }
            1 | 2 => {
                let blocks = match &self.reqs[&id].kind {
                    ReqKind::Clear { blocks } => blocks.clone(),
                    _ => unreachable!(),
                };
                let keep = self.protected_blocks(core);
                if stage == 1 {
                    for b in blocks.iter().filter(|b| !keep.contains(b)) {
                        self.cores[core].dir_d.remove(b);
                        self.cores[core].dir_i.remove(b);
                    }
                    self.reqs.get_mut(&id).unwrap().stage = 2;
                    let comp = self.comp_l3();
                    self.enqueue(comp, id);
                } else {
                    for b in blocks.iter().filter(|b| !keep.contains(b)) {
                        self.l3_dir_d.remove(&(*b, core));
                        self.l3_dir_i.remove(&(*b, core));
                    }
                    self.finish(id);
                }
            }
            _ => unreachable!(),
        }
    }

    /// Blocks whose directory records a clear walk must keep: surviving
    /// quarantine entries and still-live in-flight fetches of this core.
    fn protected_blocks(&self, core: usize) -> BTreeSet<u32> {
        let mut keep: BTreeSet<u32> = self.cores[core].pre.iter().map(|e| e.block).collect();
        for r in self.reqs.values() {
            if r.core == core
                && !r.dead
                && matches!(r.kind, ReqKind::Load { .. } | ReqKind::IFetch { .. })
            {
                keep.insert(r.block);
            }
        }
        keep
    }

    // ---- TLB ----

    /// Translate a data address. Identity mapping; the timing and the
    /// structure contents are what the model cares about.
    pub fn translate(&mut self, core: usize, seq: u64, vaddr: u32) -> Translation {
        if !self.cfg.paging {
            return Translation::Ready(vaddr);
        }
        let vpn = vaddr >> PAGE_SHIFT;
        let off = vaddr & ((1 << PAGE_SHIFT) - 1);
        if let Some(pfn) = self.cores[core].tlb.lookup(vpn) {
            return Translation::Ready((pfn << PAGE_SHIFT) | off);
        }
        if self.cfg.mode == Mode::Precache {
            if let Some(pfn) = self.cores[core].pretlb.lookup(vpn) {
                return Translation::Ready((pfn << PAGE_SHIFT) | off);
            }
        }
        if !self.walks[core].contains_key(&vpn) {
            let done = self.now + self.cfg.tlb_walk_latency;
            self.walks[core].insert(vpn, (seq, done));
            self.stats.tlb_walks += 1;
        }
        Translation::Walking
    }

    /// Squash: drop this core's pending walks owned by squashed loads.
    /// Baseline walks run to completion and install regardless.
    pub fn cancel_walks(&mut self, core: usize, from_seq: u64) {
        if self.cfg.mode == Mode::Precache {
            self.walks[core].retain(|_, &mut (seq, _)| seq < from_seq);
        }
    }

    /// A committing memory instruction graduates its page's speculative
    /// translation.
    pub fn commit_promote_tlb(&mut self, core: usize, vaddr: u32) {
        if !self.cfg.paging || self.cfg.mode != Mode::Precache {
            return;
        }
        let vpn = vaddr >> PAGE_SHIFT;
        if let Some(e) = self.cores[core].pretlb.remove(vpn) {
            self.cores[core].tlb.insert(e.vpn, e.pfn, e.inserter_seq);
        }
    }

    /// Deferred L1 recency update for a committed load that originally hit
    /// in L1.
    pub fn commit_touch_l1d(&mut self, core: usize, block: u32) {
        if self.cores[core].l1d.contains(block) {
            self.cores[core].l1d.touch(block);
        }
    }

    fn step(&mut self, id: ReqId) {
        match &self.reqs[&id].kind {
            ReqKind::Load { .. } => self.step_load(id),
            ReqKind::IFetch { .. } => self.step_ifetch(id),
            ReqKind::Stc { .. } => self.step_stc(id),
            ReqKind::Store { .. } => self.step_store(id),
            ReqKind::Clear { .. } => self.step_clear(id),
            ReqKind::Downgrade { .. } | ReqKind::Inval { .. } => self.step_chain(id),
        }
    }

    /// True when no request, queue entry, lock, walk or timer remains.
    /// What is still in flight, for drain-failure diagnostics.
    pub fn pending_summary(&self) -> String {
        let mut s = String::new();
        for (id, r) in &self.reqs {
            s.push_str(&format!(
                "req {id}: core{} block {:#010x} stage {} dead {} {:?}\n",
                r.core, r.block, r.stage, r.dead, r.kind
            ));
        }
        for ((comp, set), id) in &self.locks {
            s.push_str(&format!("lock comp{comp} set {set} held by req {id}\n"));
        }
        for b in &self.store_pending {
            s.push_str(&format!("store window open on block {b:#010x}\n"));
        }
        s
    }

    pub fn quiescent(&self) -> bool {
        self.reqs.is_empty()
            && self.queues.iter().all(|q| q.is_empty())
            && self.due.is_empty()
            && self.locks.is_empty()
            && self.walks.iter().all(|w| w.is_empty())
    }

    // ---- introspection for dumps, the scanner and tests ----

    pub fn core_mem(&self, c: usize) -> &CoreMem {
        &self.cores[c]
    }

    pub fn core_mem_mut(&mut self, c: usize) -> &mut CoreMem {
        &mut self.cores[c]
    }

    pub fn l3_cache(&self) -> &CacheArray {
        &self.l3
    }

    pub fn llc_dir(&self) -> &BTreeMap<u32, DirEntry> {
        &self.dir
    }

    pub fn l3_dir_d(&self) -> &BTreeSet<(u32, usize)> {
        &self.l3_dir_d
    }

    pub fn l3_dir_i(&self) -> &BTreeSet<(u32, usize)> {
        &self.l3_dir_i
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Live (not cancelled) in-flight fetch blocks of a core, for the
    /// scanner's in-flight allowances.
    pub fn inflight_blocks(&self, core: usize) -> BTreeSet<u32> {
        self.reqs
            .values()
            .filter(|r| {
                r.core == core
                    && !r.dead
                    && matches!(r.kind, ReqKind::Load { .. } | ReqKind::IFetch { .. })
            })
            .map(|r| r.block)
            .collect()
    }

    pub fn has_inflight(&self) -> bool {
        !self.reqs.is_empty()
    }
}

#[cfg(test)]
mod tests;
