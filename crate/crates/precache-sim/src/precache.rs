//! Per-core quarantine structures: the data Pre-cache, the instruction
//! Pre-cache with its per-guard block counter queue, and the TLB/pre-TLB
//! pair used when paging is enabled.

use std::collections::VecDeque;

/// One quarantined data block, held until the load that fetched it commits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreCacheEntry {
    pub block: u32,
    pub data: Vec<u8>,
    /// Level the miss was served from: 1=L2, 2=L3, 3=memory. L1 hits never
    /// allocate an entry.
    pub hit_level: u8,
    /// Set once the committing load's cache write is in flight; locked
    /// entries survive squash clears but not invalidations.
    pub stc_locked: bool,
    /// Request id of the in-flight cache write, so an invalidation can
    /// abort it.
    pub stc_req: Option<u64>,
    pub inserter_seq: u64,
}

#[derive(Debug, Clone, Default)]
pub struct PreCache {
    entries: Vec<PreCacheEntry>,
    capacity: usize,
}

impl PreCache {
    pub fn new(capacity: u32) -> Self {
        Self { entries: Vec::new(), capacity: capacity as usize }
    }

    pub fn lookup(&self, block: u32) -> Option<&PreCacheEntry> {
        self.entries.iter().find(|e| e.block == block)
    }

    pub fn lookup_mut(&mut self, block: u32) -> Option<&mut PreCacheEntry> {
        self.entries.iter_mut().find(|e| e.block == block)
    }

    /// Insert or overwrite the entry for a block. One entry per block; the
    /// load queue bounds occupancy, so overflow is an internal fault.
    pub fn fill(&mut self, block: u32, data: Vec<u8>, hit_level: u8, inserter_seq: u64) {
        debug_assert!(matches!(hit_level, 1..=3));
        if let Some(e) = self.lookup_mut(block) {
            e.data = data;
            e.hit_level = hit_level;
            e.inserter_seq = inserter_seq;
            return;
        }
        assert!(self.entries.len() < self.capacity, "pre-cache overflow");
        self.entries.push(PreCacheEntry {
            block,
            data,
            hit_level,
            stc_locked: false,
            stc_req: None,
            inserter_seq,
        });
    }

    pub fn remove(&mut self, block: u32) -> Option<PreCacheEntry> {
        let i = self.entries.iter().position(|e| e.block == block)?;
        Some(self.entries.swap_remove(i))
    }

    pub fn has(&self, block: u32) -> bool {
        self.entries.iter().any(|e| e.block == block)
    }

    pub fn full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    /// Make room by dropping the unlocked entry with the oldest inserting
    /// load. None when every entry has its cache write in flight.
    pub fn evict_oldest_unlocked(&mut self) -> Option<u32> {
        let i = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.stc_locked)
            .min_by_key(|(_, e)| e.inserter_seq)
            .map(|(i, _)| i)?;
        Some(self.entries.swap_remove(i).block)
    }

    /// Squash clear: drop every unlocked entry, returning their blocks for
    /// the directory walk. Locked entries belong to committed loads whose
    /// writes are in flight and must survive.
    pub fn clear_unlocked(&mut self) -> Vec<u32> {
        let cleared: Vec<u32> =
            self.entries.iter().filter(|e| !e.stc_locked).map(|e| e.block).collect();
        self.entries.retain(|e| e.stc_locked);
        cleared
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PreCacheEntry> {
        self.entries.iter()
    }
}

/// One quarantined instruction block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IPreCacheEntry {
    pub block: u32,
    pub data: Vec<u8>,
    /// Guard window the block was fetched under; windows are released
    /// front-to-back as guards commit.
    pub window: u64,
}

/// Instruction Pre-cache plus the counter queue pairing quarantined blocks
/// with the speculation guard (conditional branch or indirect jump) they
/// were fetched under.
///
/// Protocol: decoding a guard opens a new window (a zero count is pushed);
/// each quarantined fill increments the youngest window's count; when the
/// oldest live guard commits, its count is popped and that many blocks
/// graduate from the front. Erasing an entry early (invalidation) decrements
/// its window's count, so the queue sum always equals the number of
/// quarantined blocks.
#[derive(Debug, Clone, Default)]
pub struct IPreCache {
    entries: VecDeque<IPreCacheEntry>,
    /// Per-live-guard counts, oldest first. Parallel vector of window ids.
    counts: VecDeque<(u64, u32)>,
    next_window: u64,
    capacity: usize,
}

impl IPreCache {
    pub fn new(capacity: u32) -> Self {
        Self { capacity: capacity as usize, ..Self::default() }
    }

    pub fn lookup(&self, block: u32) -> Option<&IPreCacheEntry> {
        self.entries.iter().find(|e| e.block == block)
    }

    /// True when a fill would overflow; the fetch stage stalls on this
    /// rather than dropping blocks.
    pub fn full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    /// A guard entered the window-tracking frontend.
    pub fn on_guard_decoded(&mut self) {
        self.counts.push_back((self.next_window, 0));
        self.next_window += 1;
    }

    /// Number of live guard windows.
    pub fn guard_windows(&self) -> usize {
        self.counts.len()
    }

    /// Counts only, oldest window first.
    pub fn queue_counts(&self) -> Vec<u32> {
        self.counts.iter().map(|&(_, n)| n).collect()
    }

    pub fn quarantined(&self) -> usize {
        self.entries.len()
    }

    /// Quarantine a block under the youngest open window. Returns false when
    /// no guard window is live (caller then fills the cache directly: with
    /// no unresolved guard the fetch is not speculative).
    pub fn fill(&mut self, block: u32, data: Vec<u8>) -> bool {
        let Some(&mut (window, ref mut count)) = self.counts.back_mut() else {
            return false;
        };
        if let Some(e) = self.entries.iter_mut().find(|e| e.block == block) {
            e.data = data;
            return true;
        }
        assert!(self.entries.len() < self.capacity, "ipre-cache overflow");
        *count += 1;
        self.entries.push_back(IPreCacheEntry { block, data, window });
        true
    }

    /// Oldest guard committed: pop its count and hand back the blocks that
    /// graduate to the instruction caches.
    pub fn on_guard_commit(&mut self) -> Vec<IPreCacheEntry> {
        let Some((window, count)) = self.counts.pop_front() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        while self.entries.front().is_some_and(|e| e.window == window) {
            out.push(self.entries.pop_front().unwrap());
        }
        assert_eq!(out.len(), count as usize, "window count out of sync");
        out
    }

    /// Invalidation or eviction routed up from below.
    pub fn invalidate(&mut self, block: u32) -> bool {
        let Some(i) = self.entries.iter().position(|e| e.block == block) else {
            return false;
        };
        let window = self.entries[i].window;
        self.entries.remove(i);
        if let Some(c) = self.counts.iter_mut().find(|c| c.0 == window) {
            c.1 -= 1;
        }
        true
    }

    /// Squash: blanket-erase all entries and rebuild one empty window per
    /// surviving (decoded, uncommitted) guard. Returns erased blocks for the
    /// directory walk.
    pub fn clear(&mut self, surviving_guards: usize) -> Vec<u32> {
        let blocks = self.entries.iter().map(|e| e.block).collect();
        self.entries.clear();
        self.counts.clear();
        for _ in 0..surviving_guards {
            self.counts.push_back((self.next_window, 0));
            self.next_window += 1;
        }
        blocks
    }

    pub fn iter(&self) -> impl Iterator<Item = &IPreCacheEntry> {
        self.entries.iter()
    }
}

/// Fully associative LRU translation buffer. With identity paging the
/// payload pfn always equals the vpn; the structure still matters because
/// its *contents* are an attack surface.
#[derive(Debug, Clone, Default)]
pub struct TlbArray {
    entries: Vec<TlbEntry>,
    capacity: usize,
    clock: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlbEntry {
    pub vpn: u32,
    pub pfn: u32,
    pub inserter_seq: u64,
    stamp: u64,
}

impl TlbArray {
    pub fn new(capacity: u32) -> Self {
        Self { capacity: capacity as usize, ..Self::default() }
    }

    pub fn lookup(&mut self, vpn: u32) -> Option<u32> {
        self.clock += 1;
        let stamp = self.clock;
        let e = self.entries.iter_mut().find(|e| e.vpn == vpn)?;
        e.stamp = stamp;
        Some(e.pfn)
    }

    pub fn contains(&self, vpn: u32) -> bool {
        self.entries.iter().any(|e| e.vpn == vpn)
    }

    pub fn insert(&mut self, vpn: u32, pfn: u32, inserter_seq: u64) {
        self.clock += 1;
        let stamp = self.clock;
        if let Some(e) = self.entries.iter_mut().find(|e| e.vpn == vpn) {
            e.pfn = pfn;
            e.stamp = stamp;
            e.inserter_seq = inserter_seq;
            return;
        }
        if self.entries.len() == self.capacity {
            let lru = self
                .entries
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| e.stamp)
                .map(|(i, _)| i)
                .expect("nonempty");
            self.entries.swap_remove(lru);
        }
        self.entries.push(TlbEntry { vpn, pfn, inserter_seq, stamp });
    }

    pub fn remove(&mut self, vpn: u32) -> Option<TlbEntry> {
        let i = self.entries.iter().position(|e| e.vpn == vpn)?;
        Some(self.entries.swap_remove(i))
    }

    pub fn take_inserted_by(&mut self, seq: u64) -> Vec<TlbEntry> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.entries.len() {
            if self.entries[i].inserter_seq == seq {
                out.push(self.entries.swap_remove(i));
            } else {
                i += 1;
            }
        }
        out
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &TlbEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes() -> Vec<u8> {
        vec![0; 64]
    }

    #[test]
    fn precache_one_entry_per_block() {
        let mut pc = PreCache::new(4);
        pc.fill(0x100, bytes(), 3, 7);
        pc.fill(0x100, bytes(), 2, 9);
        assert_eq!(pc.len(), 1);
        assert_eq!(pc.lookup(0x100).unwrap().hit_level, 2);
        assert_eq!(pc.lookup(0x100).unwrap().inserter_seq, 9);
    }

    #[test]
    fn clear_spares_locked_entries() {
        let mut pc = PreCache::new(4);
        pc.fill(0x100, bytes(), 1, 1);
        pc.fill(0x140, bytes(), 3, 7);
        pc.lookup_mut(0x100).unwrap().stc_locked = true;
        let cleared = pc.clear_unlocked();
        assert_eq!(cleared, vec![0x140]);
        assert_eq!(pc.len(), 1);
        assert!(pc.lookup(0x100).is_some());
    }

    #[test]
    fn full_quarantine_evicts_oldest_unlocked() {
        let mut pc = PreCache::new(2);
        pc.fill(0x100, bytes(), 3, 3);
        pc.fill(0x140, bytes(), 3, 1);
        pc.lookup_mut(0x140).unwrap().stc_locked = true;
        assert!(pc.full());
        assert_eq!(pc.evict_oldest_unlocked(), Some(0x100));
        pc.lookup_mut(0x140).unwrap().stc_locked = false;
        assert_eq!(pc.evict_oldest_unlocked(), Some(0x140));
        assert_eq!(pc.evict_oldest_unlocked(), None);
    }

    #[test]
    fn ipre_windows_pair_guards_with_fills() {
        let mut ip = IPreCache::new(8);
        assert!(!ip.fill(0x1000, bytes()), "no guard, no quarantine");
        ip.on_guard_decoded();
        assert!(ip.fill(0x1000, bytes()));
        assert!(ip.fill(0x1040, bytes()));
        ip.on_guard_decoded();
        assert_eq!(ip.queue_counts(), vec![2, 0]);
        let freed = ip.on_guard_commit();
        assert_eq!(freed.len(), 2);
        assert_eq!(ip.queue_counts(), vec![0]);
        assert_eq!(ip.quarantined(), 0);
    }

    #[test]
    fn ipre_invalidate_keeps_counts_consistent() {
        let mut ip = IPreCache::new(8);
        ip.on_guard_decoded();
        ip.fill(0x1000, bytes());
        ip.fill(0x1040, bytes());
        assert!(ip.invalidate(0x1000));
        assert_eq!(ip.queue_counts(), vec![1]);
        let freed = ip.on_guard_commit();
        assert_eq!(freed.len(), 1);
        assert_eq!(freed[0].block, 0x1040);
    }

    #[test]
    fn ipre_clear_rebuilds_surviving_windows() {
        let mut ip = IPreCache::new(8);
        ip.on_guard_decoded();
        ip.fill(0x1000, bytes());
        ip.on_guard_decoded();
        ip.fill(0x2000, bytes());
        let erased = ip.clear(1);
        assert_eq!(erased, vec![0x1000, 0x2000]);
        assert_eq!(ip.queue_counts(), vec![0]);
        assert_eq!(ip.on_guard_commit().len(), 0);
    }

    #[test]
    fn tlb_evicts_least_recent() {
        let mut t = TlbArray::new(2);
        t.insert(1, 1, 0);
        t.insert(2, 2, 0);
        assert_eq!(t.lookup(1), Some(1));
        t.insert(3, 3, 0);
        assert!(t.contains(1) && t.contains(3));
        assert!(!t.contains(2));
    }

    #[test]
    fn tlb_take_by_inserter() {
        let mut t = TlbArray::new(4);
        t.insert(1, 1, 10);
        t.insert(2, 2, 11);
        let moved = t.take_inserted_by(10);
        assert_eq!(moved.len(), 1);
        assert_eq!(moved[0].vpn, 1);
        assert!(t.contains(2) && !t.contains(1));
    }
}
