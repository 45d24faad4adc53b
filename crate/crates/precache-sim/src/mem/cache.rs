//! Set-associative cache array with true-LRU replacement.
//!
//! Invalid lines are absent entries; a resident line always carries a MESI
//! state of M, E or S. A fully associative structure is a single set.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mesi {
    M,
    E,
    S,
}

impl fmt::Display for Mesi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mesi::M => "M",
            Mesi::E => "E",
            Mesi::S => "S",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheLine {
    pub block: u32,
    pub mesi: Mesi,
    pub data: Vec<u8>,
    /// Last-touch stamp from the array's clock; smallest is the LRU victim.
    pub lru_stamp: u64,
    /// (core, seq) of the load whose fill inserted this line, when filled
    /// speculatively. Commit-time writes leave it empty. Pollution and
    /// transient-fill accounting key off this.
    pub inserter: Option<(usize, u64)>,
}

#[derive(Debug, Clone)]
pub struct CacheArray {
    sets: Vec<Vec<CacheLine>>,
    ways: usize,
    line_size: u32,
    set_shift: u32,
    set_mask: u32,
    clock: u64,
}

impl CacheArray {
    pub fn new(set_count: u32, ways: u32, line_size: u32) -> Self {
        assert!(set_count.is_power_of_two() && line_size.is_power_of_two());
        Self {
            sets: vec![Vec::new(); set_count as usize],
            ways: ways as usize,
            line_size,
            set_shift: line_size.trailing_zeros(),
            set_mask: set_count - 1,
            clock: 0,
        }
    }

    pub fn set_index(&self, block: u32) -> u32 {
        (block >> self.set_shift) & self.set_mask
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn lookup(&self, block: u32) -> Option<&CacheLine> {
        self.sets[self.set_index(block) as usize].iter().find(|l| l.block == block)
    }

    pub fn lookup_mut(&mut self, block: u32) -> Option<&mut CacheLine> {
        let si = self.set_index(block) as usize;
        self.sets[si].iter_mut().find(|l| l.block == block)
    }

    pub fn contains(&self, block: u32) -> bool {
        self.lookup(block).is_some()
    }

    /// Refresh recency without changing state or data.
    pub fn touch(&mut self, block: u32) {
        self.clock += 1;
        let stamp = self.clock;
        if let Some(l) = self.lookup_mut(block) {
            l.lru_stamp = stamp;
        }
    }

    /// Block that would be displaced if `block` were inserted now.
    pub fn victim_for(&self, block: u32) -> Option<u32> {
        let set = &self.sets[self.set_index(block) as usize];
        if set.iter().any(|l| l.block == block) || set.len() < self.ways {
            return None;
        }
        set.iter().min_by_key(|l| l.lru_stamp).map(|l| l.block)
    }

    /// Insert or overwrite; returns the evicted line if the set was full.
    /// The caller handles writeback/back-invalidation for the victim.
    pub fn insert(
        &mut self,
        block: u32,
        mesi: Mesi,
        data: Vec<u8>,
        inserter: Option<(usize, u64)>,
    ) -> Option<CacheLine> {
        debug_assert_eq!(data.len(), self.line_size as usize);
        self.clock += 1;
        let stamp = self.clock;
        let si = self.set_index(block) as usize;
        let set = &mut self.sets[si];
        if let Some(l) = set.iter_mut().find(|l| l.block == block) {
            l.mesi = mesi;
            l.data = data;
            l.lru_stamp = stamp;
            l.inserter = inserter;
            return None;
        }
        let evicted = if set.len() == self.ways {
            let vi = set
                .iter()
                .enumerate()
                .min_by_key(|(_, l)| l.lru_stamp)
                .map(|(i, _)| i)
                .expect("full set is nonempty");
            Some(set.swap_remove(vi))
        } else {
            None
        };
        set.push(CacheLine { block, mesi, data, lru_stamp: stamp, inserter });
        evicted
    }

    pub fn remove(&mut self, block: u32) -> Option<CacheLine> {
        let si = self.set_index(block) as usize;
        let set = &mut self.sets[si];
        let i = set.iter().position(|l| l.block == block)?;
        Some(set.swap_remove(i))
    }

    pub fn iter_lines(&self) -> impl Iterator<Item = &CacheLine> {
        self.sets.iter().flatten()
    }

    pub fn set_occupancy(&self, set_index: u32) -> usize {
        self.sets[set_index as usize].len()
    }

    /// (set, way-position, line) triples for state snapshots. Way positions
    /// follow storage order, which only mutates on insert/remove, so equal
    /// snapshots mean no structural change happened in between.
    pub fn snapshot(&self) -> Vec<(u32, usize, u32, Mesi, u64)> {
        let mut v = Vec::new();
        for (si, set) in self.sets.iter().enumerate() {
            for (wi, l) in set.iter().enumerate() {
                v.push((si as u32, wi, l.block, l.mesi, l.lru_stamp));
            }
        }
        v
    }
}
