//! Structural invariant scanner. Walks a machine's memory-side state and
//! reports every violated invariant as a human-readable string; an empty
//! result means the snapshot is internally consistent. Valid at any cycle,
//! with an allowance for requests still in flight.

use crate::config::Mode;
use crate::machine::Machine;
use crate::mem::cache::Mesi;
use std::collections::BTreeSet;

pub fn scan(m: &Machine) -> Vec<String> {
    let mut v = Vec::new();
    let ms = &m.ms;
    let cfg = ms.config();
    let n = ms.num_cores();
    let line = cfg.line_size;

    for c in 0..n {
        let cm = ms.core_mem(c);

        // Inclusive hierarchy: everything a core holds near the top must
        // exist in the levels beneath it.
        for (name, arr) in [("l1d", &cm.l1d), ("l1i", &cm.l1i)] {
            for l in arr.iter_lines() {
                if !cm.l2.contains(l.block) {
                    v.push(format!("core{c} {name} {:#010x} missing from l2", l.block));
                }
            }
        }
        if let Some(vc) = &cm.vc {
            for l in vc.iter_lines() {
                if !cm.l2.contains(l.block) {
                    v.push(format!("core{c} victim {:#010x} missing from l2", l.block));
                }
            }
        }
        for l in cm.l2.iter_lines() {
            if !ms.l3_cache().contains(l.block) {
                v.push(format!("core{c} l2 {:#010x} missing from l3", l.block));
            }
        }

        // Quarantine capacity is a hard structural bound.
        if cm.pre.len() > cfg.precache_entries() as usize {
            v.push(format!("core{c} pre-cache over capacity: {}", cm.pre.len()));
        }
        if cm.ipre.quarantined() > cfg.iprecache_entries as usize {
            v.push(format!("core{c} ipre-cache over capacity: {}", cm.ipre.quarantined()));
        }
        if cm.tlb.len() > cfg.tlb_entries as usize {
            v.push(format!("core{c} tlb over capacity: {}", cm.tlb.len()));
        }
        if cm.pretlb.len() > cfg.pretlb_entries as usize {
            v.push(format!("core{c} pre-tlb over capacity: {}", cm.pretlb.len()));
        }

        // The counter queue must account for every quarantined block.
        let window_sum: u32 = cm.ipre.queue_counts().iter().sum();
        if window_sum as usize != cm.ipre.quarantined() {
            v.push(format!(
                "core{c} ipre window counts {window_sum} != {} entries",
                cm.ipre.quarantined()
            ));
        }

        // Reverse-inclusive quarantine directories: records point at
        // quarantined or in-flight blocks, and every settled entry that
        // walked a level left its record there.
        let inflight = ms.inflight_blocks(c);
        let pre_blocks: BTreeSet<u32> = cm.pre.iter().map(|e| e.block).collect();
        let ipre_blocks: BTreeSet<u32> = cm.ipre.iter().map(|e| e.block).collect();
        for &b in &cm.dir_d {
            if !pre_blocks.contains(&b) && !inflight.contains(&b) {
                v.push(format!("core{c} dir_d {b:#010x} has no pre entry"));
            }
        }
        for &b in &cm.dir_i {
            if !ipre_blocks.contains(&b) && !inflight.contains(&b) {
                v.push(format!("core{c} dir_i {b:#010x} has no ipre entry"));
            }
        }
        for e in cm.pre.iter() {
            if e.stc_locked {
                continue; // an in-flight STC strips records as it descends
            }
            if e.hit_level >= 1 && !cm.dir_d.contains(&e.block) {
                v.push(format!("core{c} pre {:#010x} missing dir_d record", e.block));
            }
            if e.hit_level >= 2 && !ms.l3_dir_d().contains(&(e.block, c)) {
                v.push(format!("core{c} pre {:#010x} missing l3 dir_d record", e.block));
            }
        }

        // Quarantined and cached bytes must mirror memory: writes land in
        // memory at commit, so every live copy is a copy.
        if !cfg.corrupt_stc {
            for e in cm.pre.iter() {
                if e.data != ms.mem.read_range(e.block, line) {
                    v.push(format!("core{c} pre {:#010x} bytes diverge from memory", e.block));
                }
            }
        }
        let arrays = [("l1d", &cm.l1d), ("l1i", &cm.l1i), ("l2", &cm.l2)];
        for (name, arr) in arrays {
            for l in arr.iter_lines() {
                if l.data != ms.mem.read_range(l.block, line) {
                    v.push(format!("core{c} {name} {:#010x} bytes diverge from memory", l.block));
                }
                if cfg.mode == Mode::Precache && l.inserter.is_some() {
                    v.push(format!("core{c} {name} {:#010x} filled speculatively", l.block));
                }
            }
        }
    }

    for l in ms.l3_cache().iter_lines() {
        if l.data != ms.mem.read_range(l.block, line) {
            v.push(format!("l3 {:#010x} bytes diverge from memory", l.block));
        }
        if cfg.mode == Mode::Precache && l.inserter.is_some() {
            v.push(format!("l3 {:#010x} filled speculatively", l.block));
        }
    }

    // Directory accuracy and the single-writer rule.
    let holders = |block: u32| -> BTreeSet<usize> {
        (0..n)
            .filter(|&c| {
                let cm = ms.core_mem(c);
                cm.l1d.contains(block)
                    || cm.l1i.contains(block)
                    || cm.l2.contains(block)
                    || cm.vc.as_ref().is_some_and(|vc| vc.contains(block))
            })
            .collect()
    };
    let mut seen = BTreeSet::new();
    for (&block, d) in ms.llc_dir() {
        seen.insert(block);
        let actual = holders(block);
        if d.sharers != actual {
            v.push(format!(
                "dir {block:#010x} sharers {:?} but actual holders {:?}",
                d.sharers, actual
            ));
        }
        if let Some(o) = d.owner {
            if d.sharers != BTreeSet::from([o]) {
                v.push(format!("dir {block:#010x} owner {o} not sole sharer"));
            }
            let cm = ms.core_mem(o);
            for (name, arr) in [("l1d", &cm.l1d), ("l1i", &cm.l1i), ("l2", &cm.l2)] {
                if let Some(l) = arr.lookup(block) {
                    if l.mesi == Mesi::S {
                        v.push(format!("dir {block:#010x} owned but {name} copy is S"));
                    }
                }
            }
        } else {
            for &c in &d.sharers {
                let cm = ms.core_mem(c);
                for (name, arr) in [("l1d", &cm.l1d), ("l1i", &cm.l1i), ("l2", &cm.l2)] {
                    if let Some(l) = arr.lookup(block) {
                        if l.mesi != Mesi::S {
                            v.push(format!(
                                "dir {block:#010x} unowned but core{c} {name} copy is {}",
                                l.mesi
                            ));
                        }
                    }
                }
            }
        }
    }
    for c in 0..n {
        let cm = ms.core_mem(c);
        for arr in [&cm.l1d, &cm.l1i, &cm.l2] {
            for l in arr.iter_lines() {
                if !seen.contains(&l.block) {
                    v.push(format!("core{c} holds {:#010x} unknown to the directory", l.block));
                    seen.insert(l.block);
                }
            }
        }
    }
    v
}
