//! Deterministic two-ended performance workloads.
//!
//! `boundary_encroachment` is built to punish machines that let wrong-path
//! fills land: each core's hot working set exactly fills one L1 set, and the
//! speculative overrun read maps to that same set, so a landed fill evicts a
//! hot line and the next pass re-misses the whole set. `streaming` is the
//! opposite end, a miss-heavy pointer-free scan with no speculation to
//! exploit, bounding how much the quarantine path may cost on workloads it
//! cannot help.

use crate::config::{Mode, SimConfig};
use crate::isa::assemble;
use crate::stats::Stats;

use super::run_program;

/// Two cores each chase a four-node linked list whose blocks sit 8KB apart,
/// so they map to one L1 set and exactly fill its four ways. The last node's
/// link points one block past the working set, into the same set. The loop
/// exit count is entangled with the chase data, so the exit branch cannot
/// resolve until the last hop returns, and by then the speculative fifth hop
/// has already issued a read of the out-of-bounds block. A machine that lets
/// that fill land evicts a hot way and the whole set re-misses next pass,
/// putting four serialized misses on the chase; a machine that quarantines
/// it keeps the set intact. The cores use adjacent sets and block-interleaved
/// addresses.
const BOUNDARY_SRC: &str = r#"
        LI   r1, 0x10000
        SHL  r2, r15, 6
        ADD  r1, r1, r2
        LI   r5, 0
outer:
        MOV  r9, r1
        LI   r7, 0
inner:
        LD   r9, [r9]
        SUB  r4, r9, r9
        ADD  r7, r7, 1
        ADD  r11, r7, r4
        ADD  r11, r11, 0
        ADD  r11, r11, 0
        ADD  r11, r11, 0
        ADD  r11, r11, 0
        ADD  r11, r11, 0
        ADD  r11, r11, 0
        ADD  r11, r11, 0
        ADD  r11, r11, 0
        ADD  r11, r11, 0
        ADD  r11, r11, 0
        BNE  r11, 4, inner
        ADD  r5, r5, 1
        BNE  r5, 240, outer
        HALT

        ; core 0 list: 0x10000 -> 0x12000 -> 0x14000 -> 0x16000 -> 0x18000
.data 0x10000: 0x00 0x20 0x01 0x00
.data 0x12000: 0x00 0x40 0x01 0x00
.data 0x14000: 0x00 0x60 0x01 0x00
.data 0x16000: 0x00 0x80 0x01 0x00
        ; core 1 list: the same chain shifted one block over
.data 0x10040: 0x40 0x20 0x01 0x00
.data 0x12040: 0x40 0x40 0x01 0x00
.data 0x14040: 0x40 0x60 0x01 0x00
.data 0x16040: 0x40 0x80 0x01 0x00
"#;

/// Single-core streaming scan: 512 consecutive blocks, touched once each.
/// Every load misses to memory and nothing re-uses a line, so any slowdown
/// here is pure overhead from the speculative-fill path.
const STREAMING_SRC: &str = r#"
        LI   r1, 0x40000
        LI   r2, 0
scan:
        LD   r3, [r1]
        ADD  r1, r1, 64
        ADD  r2, r2, 1
        BNE  r2, 512, scan
        HALT
"#;

fn run(src: &str, cores: u32, mode: Mode) -> Stats {
    let program = assemble(src).expect("workload assembles");
    let config = SimConfig { mode, cores, paging: false, ..SimConfig::default() };
    let outcome = run_program(&config, &program);
    assert!(!outcome.stats.max_cycles_exceeded, "workload did not finish");
    assert!(outcome.violations.is_empty(), "workload hit invariant violations");
    outcome.stats
}

/// Runs the neighbour-encroachment workload on two cores in both modes.
/// Returns `[baseline, precache]` stats.
pub fn boundary_encroachment() -> [Stats; 2] {
    [run(BOUNDARY_SRC, 2, Mode::Baseline), run(BOUNDARY_SRC, 2, Mode::Precache)]
}

/// Runs the streaming scan on one core in both modes.
/// Returns `[baseline, precache]` stats.
pub fn streaming() -> [Stats; 2] {
    [run(STREAMING_SRC, 1, Mode::Baseline), run(STREAMING_SRC, 1, Mode::Precache)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_workload_runs_and_squashes() {
        let [base, pre] = boundary_encroachment();
        assert_eq!(base.committed, pre.committed);
        // One exit mispredict per outer pass per core.
        assert!(base.squashes > 400, "baseline squashes: {}", base.squashes);
        assert!(pre.squashes > 400, "precache squashes: {}", pre.squashes);
        assert!(base.squashed_loads > 400, "baseline squashed loads: {}", base.squashed_loads);
        // Every landed overrun fill displaces a hot way.
        assert!(base.polluting_loads > 400, "baseline polluting loads: {}", base.polluting_loads);
        assert_eq!(pre.polluting_loads, 0);
        assert!(
            pre.ipc() >= base.ipc(),
            "precache ipc {:.4} below baseline {:.4}",
            pre.ipc(),
            base.ipc()
        );
    }

    #[test]
    fn streaming_workload_runs_clean() {
        let [base, pre] = streaming();
        assert_eq!(base.committed, pre.committed);
        assert!(base.committed >= 512 * 4);
        assert_eq!(pre.polluting_loads, 0);
    }
}
