//! Text snapshot of every cache-like structure, stable enough to diff
//! byte for byte between runs. The snapshot only makes sense once the
//! memory system has gone quiet; dumping mid-flight is refused because a
//! half-finished fill would make the comparison meaningless.

use crate::machine::Machine;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("memory system still busy; run must finish and drain before dumping")]
pub struct DumpBusy;

pub fn render(m: &Machine) -> Result<String, DumpBusy> {
    if !m.quiesced() {
        return Err(DumpBusy);
    }
    let mut out = String::new();
    for c in 0..m.num_cores() {
        let cm = m.ms.core_mem(c);
        for (name, arr) in [("L1D", &cm.l1d), ("L1I", &cm.l1i), ("L2", &cm.l2)] {
            let _ = writeln!(out, "=== core{c} {name} ===");
            let mut lines: Vec<_> = arr.iter_lines().map(|l| (l.block, l.mesi)).collect();
            lines.sort_unstable();
            for (block, mesi) in lines {
                let _ = writeln!(out, "{block:08x} {mesi}");
            }
        }
        let _ = writeln!(out, "=== core{c} PRECACHE ===");
        let mut pre: Vec<_> =
            cm.pre.iter().map(|e| (e.block, e.hit_level, e.stc_locked)).collect();
        pre.sort_unstable();
        for (block, h, locked) in pre {
            let _ = writeln!(out, "{block:08x} h={h} locked={}", locked as u8);
        }
        let _ = writeln!(out, "=== core{c} IPRECACHE ===");
        let mut ipre: Vec<_> = cm.ipre.iter().map(|e| e.block).collect();
        ipre.sort_unstable();
        for block in ipre {
            let _ = writeln!(out, "{block:08x}");
        }
        for (name, tlb) in [("TLB", &cm.tlb), ("PRETLB", &cm.pretlb)] {
            let _ = writeln!(out, "=== core{c} {name} ===");
            let mut ents: Vec<_> = tlb.iter().map(|e| (e.vpn, e.pfn)).collect();
            ents.sort_unstable();
            for (vpn, pfn) in ents {
                let _ = writeln!(out, "{vpn:05x}->{pfn:05x}");
            }
        }
    }
    let _ = writeln!(out, "=== L3 ===");
    let mut lines: Vec<_> = m.ms.l3_cache().iter_lines().map(|l| (l.block, l.mesi)).collect();
    lines.sort_unstable();
    for (block, mesi) in lines {
        let _ = writeln!(out, "{block:08x} {mesi}");
    }
    Ok(out)
}

/// Every block address listed in any cache section. TLB sections name
/// pages, not blocks, and are skipped.
pub fn cache_blocks(dump: &str) -> std::collections::BTreeSet<u32> {
    let mut out = std::collections::BTreeSet::new();
    let mut skip = false;
    for line in dump.lines() {
        if let Some(name) = line.strip_prefix("=== ").and_then(|r| r.strip_suffix(" ===")) {
            skip = name.ends_with("TLB");
            continue;
        }
        if skip {
            continue;
        }
        if let Some(hex) = line.split_whitespace().next() {
            if let Ok(b) = u32::from_str_radix(hex, 16) {
                out.insert(b);
            }
        }
    }
    out
}

/// Blocks listed under one section of a rendered dump, for tests that ask
/// "is this address anywhere in that structure".
pub fn section_blocks(dump: &str, section: &str) -> Vec<u32> {
    let mut out = Vec::new();
    let mut inside = false;
    for line in dump.lines() {
        if let Some(name) = line.strip_prefix("=== ").and_then(|r| r.strip_suffix(" ===")) {
            inside = name == section;
            continue;
        }
        if inside {
            // Cache lines lead with the block address; TLB lines with the vpn.
            let head = line.split("->").next().unwrap_or(line);
            if let Some(hex) = head.split_whitespace().next() {
                if let Ok(b) = u32::from_str_radix(hex, 16) {
                    out.push(b);
                }
            }
        }
    }
    out
}
