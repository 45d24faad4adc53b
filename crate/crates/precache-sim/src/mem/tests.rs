use super::*;
use crate::config::{Mode, SimConfig};

// L1: 32KB/4w/64B = 128 sets, set stride 0x2000.
// L2: 2MB/8w = 4096 sets, stride 0x40000. L3: 8MB/16w = 8192 sets.
const L1_STRIDE: u32 = 0x2000;
const L2_STRIDE: u32 = 0x40000;

struct Driver {
    ms: MemorySystem,
    now: u64,
    seq: u64,
    loads: Vec<(usize, u64, u32, bool)>,
    stores: Vec<(usize, u64)>,
    fetches: Vec<(usize, u32)>,
}

fn test_cfg(mode: Mode, cores: u32) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.mode = mode;
    cfg.cores = cores;
    cfg.validate().unwrap();
    cfg
}

impl Driver {
    fn new(mode: Mode, cores: u32) -> Self {
        let mut image = SparseMem::default();
        image.write_u32(0x1000, 0xdead_beef);
        image.write_u32(0x1004, 0x1111_1111);
        Self {
            ms: MemorySystem::new(&test_cfg(mode, cores), image),
            now: 0,
            seq: 0,
            loads: Vec::new(),
            stores: Vec::new(),
            fetches: Vec::new(),
        }
    }

    fn tick(&mut self) {
        self.ms.cycle(self.now);
        self.loads.append(&mut self.ms.load_done);
        self.stores.append(&mut self.ms.store_done);
        self.fetches.append(&mut self.ms.ifetch_done);
        self.now += 1;
    }

    fn run(&mut self, n: u64) {
        for _ in 0..n {
            self.tick();
        }
    }

    fn drain(&mut self) {
        for _ in 0..5000 {
            if self.ms.quiescent() {
                return;
            }
            self.tick();
        }
        panic!("memory system failed to drain");
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Issue a word load and run until its value arrives. Returns
    /// (value, completion cycle).
    fn load_sync(&mut self, core: usize, addr: u32) -> (u32, u64) {
        let seq = self.next_seq();
        self.ms.issue_load(core, seq, addr, 4);
        for _ in 0..5000 {
            self.tick();
            if let Some(i) = self.loads.iter().position(|&(c, s, _, _)| c == core && s == seq) {
                let (_, _, v, _) = self.loads.remove(i);
                return (v, self.now - 1);
            }
        }
        panic!("load never completed");
    }

    /// Committed-load path: load then transfer to cache, fully drained.
    fn warm(&mut self, core: usize, addr: u32) {
        let block = self.ms.block_of(addr);
        self.load_sync(core, addr);
        assert_ne!(self.ms.start_stc(core, block), StcStart::Noop);
        self.drain();
    }

    fn store_sync(&mut self, core: usize, addr: u32, value: u32) {
        let seq = self.next_seq();
        match self.ms.start_store(core, seq, addr, value) {
            StoreStart::Done => {}
            StoreStart::Started => {
                for _ in 0..5000 {
                    self.tick();
                    if let Some(i) = self.stores.iter().position(|&(c, s)| c == core && s == seq) {
                        self.stores.remove(i);
                        return;
                    }
                }
                panic!("store never completed");
            }
            StoreStart::Busy => panic!("unexpected busy store"),
        }
    }
}

fn state_of(arr: &CacheArray, block: u32) -> Option<Mesi> {
    arr.lookup(block).map(|l| l.mesi)
}

#[test]
fn cold_load_fills_quarantine_only_with_full_latency() {
    let mut d = Driver::new(Mode::Precache, 1);
    let (v, done) = d.load_sync(0, 0x1000);
    assert_eq!(v, 0xdead_beef);
    // 4 (L1) + 10 (L2) + 40 (L3) + 200 (memory).
    assert_eq!(done, 254);
    let cm = d.ms.core_mem(0);
    let block = 0x1000;
    let e = cm.pre.lookup(block).expect("quarantine entry");
    assert_eq!(e.hit_level, 3);
    assert!(!e.stc_locked);
    assert!(!cm.l1d.contains(block) && !cm.l2.contains(block));
    assert!(!d.ms.l3_cache().contains(block));
    assert!(cm.dir_d.contains(&block));
    assert!(d.ms.l3_dir_d().contains(&(block, 0)));
    assert!(d.ms.llc_dir().get(&block).is_none());
}

#[test]
fn quarantine_hit_serves_at_l1_latency() {
    let mut d = Driver::new(Mode::Precache, 1);
    d.load_sync(0, 0x1000);
    let t0 = d.now;
    let (v, done) = d.load_sync(0, 0x1004);
    assert_eq!(v, 0x1111_1111);
    assert_eq!(done - t0, 4);
    assert_eq!(d.ms.stats.l1d_hits, 1);
}

#[test]
fn memory_level_stc_writes_all_levels_exclusive() {
    let mut d = Driver::new(Mode::Precache, 1);
    d.load_sync(0, 0x1000);
    let block = 0x1000;
    assert_eq!(d.ms.start_stc(0, block), StcStart::Started);
    d.drain();
    let cm = d.ms.core_mem(0);
    assert!(cm.pre.is_empty());
    assert_eq!(state_of(&cm.l1d, block), Some(Mesi::E));
    assert_eq!(state_of(&cm.l2, block), Some(Mesi::E));
    assert_eq!(state_of(d.ms.l3_cache(), block), Some(Mesi::E));
    assert!(cm.dir_d.is_empty() && d.ms.l3_dir_d().is_empty());
    let dir = d.ms.llc_dir().get(&block).expect("dir entry");
    assert_eq!(dir.owner, Some(0));
    assert_eq!(dir.sharers, BTreeSet::from([0]));
    assert_eq!(d.ms.stats.stc_written, 1);
}

/// Build the L2-resident, L1-absent state for a block by warming it and
/// then flushing it out of L1 with four set conflicts.
fn setup_l2_only(d: &mut Driver, core: usize, addr: u32) {
    d.warm(core, addr);
    for k in 1..=4 {
        d.warm(core, addr + k * L1_STRIDE);
    }
    let block = d.ms.block_of(addr);
    assert!(!d.ms.core_mem(core).l1d.contains(block), "setup: still in L1");
    assert!(d.ms.core_mem(core).l2.contains(block), "setup: lost from L2");
}

#[test]
fn l2_hit_records_at_l2_only_and_stc_writes_l1_only() {
    let mut d = Driver::new(Mode::Precache, 1);
    setup_l2_only(&mut d, 0, 0x1000);
    let block = 0x1000;
    let l2_snap = d.ms.core_mem(0).l2.snapshot();
    let l3_snap = d.ms.l3_cache().snapshot();
    d.load_sync(0, 0x1000);
    let cm = d.ms.core_mem(0);
    assert_eq!(cm.pre.lookup(block).unwrap().hit_level, 1);
    assert!(cm.dir_d.contains(&block));
    assert!(!d.ms.l3_dir_d().contains(&(block, 0)), "L2 hit must not record at L3");
    // The speculative probe leaves L2/L3 untouched, including recency.
    assert_eq!(d.ms.core_mem(0).l2.snapshot(), l2_snap);
    assert_eq!(d.ms.l3_cache().snapshot(), l3_snap);

    let l3_before = d.ms.l3_cache().snapshot();
    assert_eq!(d.ms.start_stc(0, block), StcStart::Started);
    d.drain();
    let cm = d.ms.core_mem(0);
    assert!(cm.l1d.contains(block));
    assert!(cm.dir_d.is_empty());
    assert_eq!(d.ms.l3_cache().snapshot(), l3_before, "h=1 transfer must not touch L3");
    assert_eq!(d.ms.stats.stc_written, 1 + 5);
}

#[test]
fn squash_clear_erases_unlocked_entry_and_records() {
    let mut d = Driver::new(Mode::Precache, 1);
    d.load_sync(0, 0x1000);
    d.ms.squash_core(0, BTreeSet::new(), 0);
    d.drain();
    let cm = d.ms.core_mem(0);
    assert!(cm.pre.is_empty());
    assert!(cm.dir_d.is_empty());
    assert!(d.ms.l3_dir_d().is_empty());
}

#[test]
fn clear_spares_inflight_stc_which_completes() {
    let mut d = Driver::new(Mode::Precache, 1);
    d.load_sync(0, 0x1000);
    assert_eq!(d.ms.start_stc(0, 0x1000), StcStart::Started);
    d.ms.squash_core(0, BTreeSet::new(), 0);
    d.drain();
    assert_eq!(d.ms.stats.stc_written, 1);
    assert_eq!(d.ms.stats.stc_aborted, 0);
    assert!(d.ms.core_mem(0).l1d.contains(0x1000));
}

#[test]
fn clear_races_ahead_of_concurrent_load_which_survives() {
    let mut d = Driver::new(Mode::Precache, 1);
    // The load sits in the L1 queue when the clear arrives; the clear is
    // serviced first, so the later fill must survive the walk.
    let seq = d.next_seq();
    d.ms.issue_load(0, seq, 0x1000, 4);
    d.ms.squash_core(0, BTreeSet::new(), 0);
    d.drain();
    let cm = d.ms.core_mem(0);
    assert!(cm.pre.lookup(0x1000).is_some(), "post-squash fill erased by clear");
    assert!(cm.dir_d.contains(&0x1000));
    assert!(d.ms.l3_dir_d().contains(&(0x1000, 0)));
}

#[test]
fn l2_eviction_invalidates_quarantine_entry_then_stc_noops() {
    let mut d = Driver::new(Mode::Precache, 1);
    setup_l2_only(&mut d, 0, 0x1000);
    let block = 0x1000;
    d.load_sync(0, 0x1000);
    assert_eq!(d.ms.core_mem(0).pre.lookup(block).unwrap().hit_level, 1);
    // Eight same-L2-set commits push the block's L2 line out; the
    // back-invalidation walks the quarantine directory and erases the entry.
    for k in 1..=8 {
        d.warm(0, 0x1000 + k * L2_STRIDE);
    }
    assert!(!d.ms.core_mem(0).l2.contains(block));
    assert!(d.ms.core_mem(0).pre.lookup(block).is_none(), "entry must die with its L2 line");
    assert!(!d.ms.core_mem(0).dir_d.contains(&block));
    let written_before = d.ms.stats.stc_written;
    assert_eq!(d.ms.start_stc(0, block), StcStart::Noop);
    d.drain();
    assert_eq!(d.ms.stats.stc_noop, 1);
    assert_eq!(d.ms.stats.stc_written, written_before);
}

#[test]
fn remote_store_erases_quarantined_copy_and_reload_sees_new_value() {
    let mut d = Driver::new(Mode::Precache, 2);
    d.load_sync(0, 0x1000);
    assert!(d.ms.core_mem(0).pre.lookup(0x1000).is_some());
    d.store_sync(1, 0x1000, 0x0bad_f00d);
    assert!(d.ms.core_mem(0).pre.lookup(0x1000).is_none(), "stale quarantined copy");
    assert!(d.ms.core_mem(0).dir_d.is_empty() && d.ms.l3_dir_d().is_empty());
    let (v, _) = d.load_sync(0, 0x1000);
    assert_eq!(v, 0x0bad_f00d);
}

#[test]
fn remote_store_aborts_inflight_stc_and_reload_sees_new_value() {
    let mut d = Driver::new(Mode::Precache, 2);
    d.load_sync(0, 0x1000);
    assert_eq!(d.ms.start_stc(0, 0x1000), StcStart::Started);
    // Fire the conflicting store while the transfer still descends the
    // hierarchy; its invalidation reaches the entry first and the transfer
    // must finish with zero writes.
    let seq = d.next_seq();
    assert_eq!(d.ms.start_store(1, seq, 0x1000, 0x0bad_f00d), StoreStart::Started);
    d.drain();
    assert_eq!(d.ms.stats.stc_aborted, 1);
    assert_eq!(d.ms.stats.stc_written, 0);
    assert_eq!(d.ms.mem.read_u32(0x1000), 0x0bad_f00d);
    assert!(!d.ms.core_mem(0).l1d.contains(0x1000), "aborted transfer leaked a fill");
    let (v, _) = d.load_sync(0, 0x1000);
    assert_eq!(v, 0x0bad_f00d);
}

#[test]
fn own_store_consumes_quarantine_entry_without_invalidation_traffic() {
    let mut d = Driver::new(Mode::Precache, 1);
    d.load_sync(0, 0x1000);
    d.store_sync(0, 0x1000, 42);
    assert!(d.ms.core_mem(0).pre.is_empty());
    assert_eq!(state_of(&d.ms.core_mem(0).l1d, 0x1000), Some(Mesi::M));
    assert_eq!(d.ms.mem.read_u32(0x1000), 42);
    let (v, _) = d.load_sync(0, 0x1000);
    assert_eq!(v, 42);
}

#[test]
fn baseline_cold_load_fills_every_level() {
    let mut d = Driver::new(Mode::Baseline, 2);
    let (v, done) = d.load_sync(0, 0x1000);
    assert_eq!(v, 0xdead_beef);
    assert_eq!(done, 254);
    let cm = d.ms.core_mem(0);
    assert_eq!(state_of(&cm.l1d, 0x1000), Some(Mesi::E));
    assert_eq!(state_of(&cm.l2, 0x1000), Some(Mesi::E));
    assert_eq!(state_of(d.ms.l3_cache(), 0x1000), Some(Mesi::E));
    assert!(cm.pre.is_empty());
    // A second core's read demotes everyone to shared.
    d.load_sync(1, 0x1000);
    assert_eq!(state_of(&d.ms.core_mem(0).l1d, 0x1000), Some(Mesi::S));
    assert_eq!(state_of(&d.ms.core_mem(1).l2, 0x1000), Some(Mesi::S));
    assert_eq!(state_of(d.ms.l3_cache(), 0x1000), Some(Mesi::S));
    let dir = d.ms.llc_dir().get(&0x1000).unwrap();
    assert_eq!(dir.owner, None);
    assert_eq!(dir.sharers, BTreeSet::from([0, 1]));
}

#[test]
fn baseline_squashed_load_still_fills_and_counts_pollution() {
    let mut d = Driver::new(Mode::Baseline, 1);
    // Fill one L1 set, then squash a conflicting load mid-flight.
    for k in 0..4 {
        d.load_sync(0, 0x1000 + k * L1_STRIDE);
    }
    let seq = d.next_seq();
    let id = d.ms.issue_load(0, seq, 0x1000 + 5 * L1_STRIDE, 4);
    d.run(20);
    assert_eq!(d.ms.cancel_load(id), None);
    d.drain();
    let block = d.ms.block_of(0x1000 + 5 * L1_STRIDE);
    assert!(d.ms.core_mem(0).l1d.contains(block), "baseline fill must land anyway");
    assert_eq!(d.ms.stats.polluting_loads, 1);
    assert!(!d.loads.iter().any(|&(_, s, _, _)| s == seq), "dead load must not deliver");
}

#[test]
fn precache_squashed_load_vanishes_without_trace() {
    let mut d = Driver::new(Mode::Precache, 1);
    let seq = d.next_seq();
    let id = d.ms.issue_load(0, seq, 0x1000, 4);
    d.run(20);
    let block = d.ms.cancel_load(id).expect("block for clear walk");
    d.ms.squash_core(0, BTreeSet::from([block]), 0);
    d.drain();
    let cm = d.ms.core_mem(0);
    assert!(cm.pre.is_empty());
    assert!(cm.dir_d.is_empty() && d.ms.l3_dir_d().is_empty());
    assert_eq!(d.ms.stats.polluting_loads, 0);
    assert!(!d.loads.iter().any(|&(_, s, _, _)| s == seq));
}

#[test]
fn guarded_ifetch_quarantines_then_guard_commit_transfers() {
    let mut d = Driver::new(Mode::Precache, 1);
    let block = 0x8000;
    d.ms.core_mem_mut(0).ipre.on_guard_decoded();
    d.ms.issue_ifetch(0, block, true);
    d.drain();
    {
        let cm = d.ms.core_mem(0);
        assert!(cm.ipre.lookup(block).is_some());
        assert!(!cm.l1i.contains(block));
        assert!(cm.dir_i.contains(&block));
        assert!(d.ms.l3_dir_i().contains(&(block, 0)));
        assert_eq!(cm.ipre.queue_counts(), vec![1]);
    }
    d.ms.ipre_commit_guard(0);
    let cm = d.ms.core_mem(0);
    assert_eq!(cm.ipre.quarantined(), 0);
    assert_eq!(state_of(&cm.l1i, block), Some(Mesi::E));
    assert_eq!(state_of(&cm.l2, block), Some(Mesi::E));
    assert_eq!(state_of(d.ms.l3_cache(), block), Some(Mesi::E));
    assert!(cm.dir_i.is_empty() && d.ms.l3_dir_i().is_empty());
}

#[test]
fn unguarded_ifetch_fills_instruction_caches_directly() {
    let mut d = Driver::new(Mode::Precache, 1);
    let block = 0x8000;
    d.ms.issue_ifetch(0, block, false);
    d.drain();
    let cm = d.ms.core_mem(0);
    assert!(cm.ipre.lookup(block).is_none());
    assert_eq!(state_of(&cm.l1i, block), Some(Mesi::E));
    assert!(cm.dir_i.is_empty() && d.ms.l3_dir_i().is_empty());
}

#[test]
fn squash_erases_instruction_quarantine() {
    let mut d = Driver::new(Mode::Precache, 1);
    let block = 0x8000;
    d.ms.core_mem_mut(0).ipre.on_guard_decoded();
    d.ms.issue_ifetch(0, block, true);
    d.drain();
    d.ms.squash_core(0, BTreeSet::new(), 0);
    d.drain();
    let cm = d.ms.core_mem(0);
    assert_eq!(cm.ipre.quarantined(), 0);
    assert!(!cm.l1i.contains(block));
    assert!(cm.dir_i.is_empty() && d.ms.l3_dir_i().is_empty());
}

#[test]
fn corrupting_the_transfer_poisons_later_hits() {
    let mut cfg = test_cfg(Mode::Precache, 1);
    cfg.corrupt_stc = true;
    let mut image = SparseMem::default();
    image.write_u32(0x1000, 0xdead_beef);
    let mut d = Driver {
        ms: MemorySystem::new(&cfg, image),
        now: 0,
        seq: 0,
        loads: Vec::new(),
        stores: Vec::new(),
        fetches: Vec::new(),
    };
    d.warm(0, 0x1000);
    let (v, _) = d.load_sync(0, 0x1000);
    assert_ne!(v, 0xdead_beef, "corruption hook must be observable");
}

#[test]
fn page_walk_fills_pretlb_then_commit_promotes() {
    let mut cfg = test_cfg(Mode::Precache, 1);
    cfg.paging = true;
    let mut d = Driver {
        ms: MemorySystem::new(&cfg, SparseMem::default()),
        now: 0,
        seq: 0,
        loads: Vec::new(),
        stores: Vec::new(),
        fetches: Vec::new(),
    };
    assert_eq!(d.ms.translate(0, 1, 0x5432), Translation::Walking);
    assert_eq!(d.ms.translate(0, 2, 0x5000), Translation::Walking);
    assert_eq!(d.ms.stats.tlb_walks, 1, "one walk per page");
    d.run(31);
    assert_eq!(d.ms.translate(0, 1, 0x5432), Translation::Ready(0x5432));
    assert!(d.ms.core_mem(0).pretlb.contains(5));
    assert!(!d.ms.core_mem(0).tlb.contains(5));
    d.ms.commit_promote_tlb(0, 0x5432);
    assert!(d.ms.core_mem(0).tlb.contains(5));
    assert!(!d.ms.core_mem(0).pretlb.contains(5));
}

#[test]
fn squash_discards_speculative_translations_and_pending_walks() {
    let mut cfg = test_cfg(Mode::Precache, 1);
    cfg.paging = true;
    let mut d = Driver {
        ms: MemorySystem::new(&cfg, SparseMem::default()),
        now: 0,
        seq: 0,
        loads: Vec::new(),
        stores: Vec::new(),
        fetches: Vec::new(),
    };
    assert_eq!(d.ms.translate(0, 1, 0x5000), Translation::Walking);
    d.run(31);
    assert!(d.ms.core_mem(0).pretlb.contains(5));
    assert_eq!(d.ms.translate(0, 2, 0x9000), Translation::Walking);
    d.ms.cancel_walks(0, 2);
    d.ms.squash_core(0, BTreeSet::new(), 0);
    d.drain();
    assert!(d.ms.core_mem(0).pretlb.is_empty());
    assert!(d.ms.core_mem(0).tlb.is_empty());
    d.run(40);
    assert!(d.ms.core_mem(0).pretlb.is_empty(), "cancelled walk still landed");
}
