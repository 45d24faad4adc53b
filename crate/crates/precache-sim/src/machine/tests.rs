//! Whole-machine checks against the architectural interpreter. Every
//! program must commit the same accesses, registers and final state in both
//! modes, regardless of how much wrong-path work the pipeline did along the
//! way.

use super::Machine;
use crate::config::{Mode, SimConfig};
use crate::isa::{assemble, interpret_with, FaultKind, InterpOptions, Program};
use crate::sparse::SparseMem;
use crate::trace::AccessKind;

fn run_machine(prog: &Program, mode: Mode, cores: u32) -> Machine {
    let mut cfg = SimConfig::default();
    cfg.mode = mode;
    cfg.cores = cores;
    cfg.validate().expect("valid config");
    let mut m = Machine::new(cfg, prog.clone());
    m.run();
    assert!(m.quiesced(), "machine must drain after run");
    let violations = crate::scan::scan(&m);
    assert!(violations.is_empty(), "invariants violated: {violations:?}");
    crate::dump::render(&m).expect("settled machine must dump");
    m
}

/// Runs the program on every core of the simulated machine and on the
/// interpreter, and checks they agree on everything architectural.
fn assert_matches_reference(m: &Machine, prog: &Program) {
    let mut final_mem = SparseMem::from_bytes(&prog.data);
    for c in 0..m.num_cores() {
        let mut refmem = SparseMem::from_bytes(&prog.data);
        let opts = InterpOptions { core_id: c as u32, ..Default::default() };
        let (rtrace, rst) = interpret_with(prog, &mut refmem, &opts);
        let st = m.arch_state(c);
        assert_eq!(m.commit_trace(c), &rtrace[..], "core {c} trace");
        assert_eq!(st.regs, rst.regs, "core {c} registers");
        assert_eq!(st.pc, rst.pc, "core {c} pc");
        assert_eq!(st.halted, rst.halted, "core {c} halted");
        assert_eq!(st.fault, rst.fault, "core {c} fault");
        assert_eq!(st.committed, rst.committed, "core {c} committed");
        for e in m.commit_trace(c) {
            if e.kind == AccessKind::Store {
                final_mem.write_u32(e.addr, e.value);
            }
        }
    }
    // Cores only ever store to disjoint addresses in these programs, so
    // applying the traces in any order reproduces shared memory.
    assert!(m.memory().semantic_eq(&final_mem), "final memory");
}

fn check_both_modes(src: &str) {
    let prog = assemble(src).expect("assembles");
    for mode in [Mode::Baseline, Mode::Precache] {
        let m = run_machine(&prog, mode, 1);
        assert_matches_reference(&m, &prog);
    }
}

#[test]
fn straight_line_matches_reference() {
    check_both_modes(
        "LI r1, 0x100\n\
         LI r2, 7\n\
         ADD r3, r2, 5\n\
         SHL r4, r3, 4\n\
         ST [r1+8], r4\n\
         LD r5, [r1+8]\n\
         LD.B r6, [r1+9]\n\
         SUB r7, r5, r6\n\
         MOV r8, r7\n\
         HALT\n\
         .data 0x100: 1 2 3 4 5 6 7 8\n",
    );
}

#[test]
fn counted_loop_matches_reference() {
    let src = "    LI r1, 0\n\
               \x20   LI r2, 0x200\n\
               loop:\n\
               \x20   ST [r2+0], r1\n\
               \x20   ADD r1, r1, 1\n\
               \x20   ADD r2, r2, 4\n\
               \x20   BNE r1, 10, loop\n\
               \x20   LD r3, [r2-4]\n\
               \x20   HALT\n";
    let prog = assemble(src).expect("assembles");
    for mode in [Mode::Baseline, Mode::Precache] {
        let m = run_machine(&prog, mode, 1);
        assert_matches_reference(&m, &prog);
        // The exit branch is necessarily mispredicted at least once.
        assert!(m.stats().squashes > 0, "loop exit must squash");
    }
}

#[test]
fn store_forwarding_matches_reference() {
    let src = "LI r1, 0x300\n\
               LI r2, 0xdeadbeef\n\
               ST [r1+0], r2\n\
               LD r3, [r1+0]\n\
               LD.B r4, [r1+1]\n\
               ST [r1+4], r3\n\
               LD r5, [r1+4]\n\
               HALT\n";
    let prog = assemble(src).expect("assembles");
    for mode in [Mode::Baseline, Mode::Precache] {
        let m = run_machine(&prog, mode, 1);
        assert_matches_reference(&m, &prog);
        let st = m.arch_state(0);
        assert_eq!(st.regs[3], 0xdead_beef);
        assert_eq!(st.regs[4], 0xbe, "byte slice of the forwarded word");
    }
}

#[test]
fn privileged_load_faults_like_reference() {
    let src = ".priv 0x8000 0x9000\n\
               LI r1, 0x8000\n\
               LD r2, [r1+0]\n\
               LI r3, 99\n\
               HALT\n";
    let prog = assemble(src).expect("assembles");
    for mode in [Mode::Baseline, Mode::Precache] {
        let m = run_machine(&prog, mode, 1);
        assert_matches_reference(&m, &prog);
        let st = m.arch_state(0);
        let f = st.fault.expect("must fault");
        assert_eq!(f.kind, FaultKind::Privileged);
        assert_eq!(f.addr, 0x8000);
        assert_eq!(st.regs[3], 0, "younger write must not retire");
    }
}

#[test]
fn misaligned_word_load_faults_like_reference() {
    check_both_modes(
        "LI r1, 0x102\n\
         LD r2, [r1+0]\n\
         HALT\n",
    );
    // An offset near the line end makes the wrong-path read wrap.
    check_both_modes(
        "LI r1, 0x13e\n\
         LD r2, [r1+0]\n\
         HALT\n",
    );
}

#[test]
fn jump_to_unmapped_address_fetch_faults() {
    let src = "LI r1, 0x5000\n\
               JI r1\n\
               HALT\n";
    let prog = assemble(src).expect("assembles");
    for mode in [Mode::Baseline, Mode::Precache] {
        let m = run_machine(&prog, mode, 1);
        assert_matches_reference(&m, &prog);
        let st = m.arch_state(0);
        let f = st.fault.expect("must fault");
        assert_eq!(f.kind, FaultKind::Fetch);
        assert_eq!(f.pc, 0x5000);
        assert_eq!(st.committed, 2, "the jump itself retires first");
    }
}

#[test]
fn falling_off_the_end_fetch_faults() {
    check_both_modes("LI r1, 5\n");
}

#[test]
fn halt_keeps_pc_and_counts_itself() {
    let prog = assemble("NOP\nHALT\n").expect("assembles");
    for mode in [Mode::Baseline, Mode::Precache] {
        let m = run_machine(&prog, mode, 1);
        assert_matches_reference(&m, &prog);
        let st = m.arch_state(0);
        assert!(st.halted);
        assert_eq!(st.pc, 4);
        assert_eq!(st.committed, 2);
    }
}

#[test]
fn outstanding_loads_never_exceed_queue_capacity() {
    // Three passes over fresh data blocks: the first pass warms the
    // instruction cache, the later ones dispatch 36 independent misses
    // back to back so the load queue itself becomes the limit.
    let mut src = String::from("    LI r1, 0x10000\n    LI r6, 0\nouter:\n");
    for i in 0..36 {
        src.push_str(&format!("    LD r2, [r1+{}]\n", i * 64));
    }
    src.push_str("    ADD r1, r1, 0x4000\n    ADD r6, r6, 1\n    BNE r6, 3, outer\n    HALT\n");
    let prog = assemble(&src).expect("assembles");
    for mode in [Mode::Baseline, Mode::Precache] {
        let m = run_machine(&prog, mode, 1);
        assert_matches_reference(&m, &prog);
        assert_eq!(
            m.stats().max_outstanding_loads,
            32,
            "independent misses should fill the load queue exactly"
        );
    }
}

#[test]
fn wrong_path_load_issues_and_is_squashed() {
    // The compare operand trickles through a shift chain, so the
    // mispredicted fall-through load reaches memory before resolution.
    let src = "    LI r1, 0x400\n\
               \x20   LI r2, 1\n\
               \x20   SHL r5, r2, 1\n\
               \x20   SHL r5, r5, 1\n\
               \x20   SHL r5, r5, 1\n\
               \x20   SHL r5, r5, 1\n\
               \x20   BEQ r5, 16, skip\n\
               \x20   LD r3, [r1+0]\n\
               skip:\n\
               \x20   HALT\n";
    let prog = assemble(src).expect("assembles");
    for mode in [Mode::Baseline, Mode::Precache] {
        let m = run_machine(&prog, mode, 1);
        assert_matches_reference(&m, &prog);
        assert!(m.stats().squashed_loads >= 1, "transient load must have issued");
        let st = m.arch_state(0);
        assert_eq!(st.regs[3], 0, "transient value must not retire");
    }
}

#[test]
fn core_id_register_separates_cores() {
    let src = "    LI r1, 0x600\n\
               \x20   SHL r2, r15, 6\n\
               \x20   ADD r1, r1, r2\n\
               \x20   ST [r1+0], r15\n\
               \x20   LD r3, [r1+0]\n\
               \x20   HALT\n";
    let prog = assemble(src).expect("assembles");
    for mode in [Mode::Baseline, Mode::Precache] {
        let m = run_machine(&prog, mode, 2);
        assert_matches_reference(&m, &prog);
        assert_eq!(m.arch_state(0).regs[3], 0);
        assert_eq!(m.arch_state(1).regs[3], 1);
        assert_eq!(m.memory().read_u32(0x600), 0);
        assert_eq!(m.memory().read_u32(0x640), 1);
    }
}

#[test]
fn dump_is_refused_while_requests_are_in_flight() {
    let prog = assemble("LI r1, 0x7000\nLD r2, [r1+0]\nHALT\n").expect("assembles");
    let mut cfg = SimConfig::default();
    cfg.cores = 1;
    let mut m = Machine::new(cfg, prog);
    m.run_for(40);
    assert!(!m.quiesced(), "the cold miss should still be in flight");
    assert!(crate::dump::render(&m).is_err());
}

#[test]
fn reruns_are_bit_identical() {
    let src = "    LI r1, 0\n\
               \x20   LI r2, 0x200\n\
               loop:\n\
               \x20   ST [r2+0], r1\n\
               \x20   LD r4, [r2+0]\n\
               \x20   ADD r1, r1, 1\n\
               \x20   ADD r2, r2, 4\n\
               \x20   BNE r1, 20, loop\n\
               \x20   HALT\n";
    let prog = assemble(src).expect("assembles");
    for mode in [Mode::Baseline, Mode::Precache] {
        let a = run_machine(&prog, mode, 2);
        let b = run_machine(&prog, mode, 2);
        assert_eq!(a.stats().to_csv(), b.stats().to_csv());
        for c in 0..2 {
            assert_eq!(a.commit_trace(c), b.commit_trace(c));
        }
        assert_eq!(a.memory(), b.memory());
    }
}
