//! Drivers shared by the command-line tool and the test suite: whole-run
//! execution bundles, run-to-run and run-to-interpreter comparison, the
//! built-in attack gadgets, the random-program fuzzer and the synthetic
//! performance workloads.

pub mod attack;
pub mod fuzz;
pub mod workloads;

pub use attack::{run_attack, AttackReport, Gadget, Verdict};
pub use fuzz::{fuzz, CaseFailure, FuzzReport};

use crate::config::SimConfig;
use crate::isa::{interpret_with, ArchState, InterpOptions, Program};
use crate::machine::Machine;
use crate::sparse::SparseMem;
use crate::stats::Stats;
use crate::trace::{AccessKind, TraceEntry};

/// Everything observable from one finished run, bundled for comparison.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub stats: Stats,
    pub arch: Vec<ArchState>,
    pub traces: Vec<Vec<TraceEntry>>,
    pub memory: SparseMem,
    pub dump: String,
    pub violations: Vec<String>,
}

pub fn run_program(cfg: &SimConfig, prog: &Program) -> RunOutcome {
    let mut m = Machine::new(cfg.clone(), prog.clone());
    m.run();
    let violations = crate::scan::scan(&m);
    let dump = crate::dump::render(&m).expect("run() leaves the memory system drained");
    RunOutcome {
        stats: *m.stats(),
        arch: (0..m.num_cores()).map(|c| m.arch_state(c)).collect(),
        traces: (0..m.num_cores()).map(|c| m.commit_trace(c).to_vec()).collect(),
        memory: m.memory().clone(),
        dump,
        violations,
    }
}

/// Whether two runs of the same program agree architecturally.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub equivalent: bool,
    /// First difference found, or None when equivalent.
    pub divergence: Option<String>,
}

impl EquivalenceReport {
    fn ok() -> Self {
        EquivalenceReport { equivalent: true, divergence: None }
    }

    fn diverged(msg: String) -> Self {
        EquivalenceReport { equivalent: false, divergence: Some(msg) }
    }
}

fn entry_str(e: &TraceEntry) -> String {
    let k = match e.kind {
        AccessKind::Load => "LD",
        AccessKind::Store => "ST",
    };
    format!("{k} {:#x} size {} value {:#x}", e.addr, e.size, e.value)
}

fn compare_core(core: usize, ta: &[TraceEntry], tb: &[TraceEntry], aa: &ArchState, ab: &ArchState) -> Option<String> {
    for (i, (x, y)) in ta.iter().zip(tb).enumerate() {
        if x.arch_key() != y.arch_key() {
            return Some(format!(
                "core {core} trace entry {i}: {} vs {}",
                entry_str(x),
                entry_str(y)
            ));
        }
    }
    if ta.len() != tb.len() {
        return Some(format!("core {core} trace length: {} vs {}", ta.len(), tb.len()));
    }
    if aa.regs != ab.regs {
        let r = (0..aa.regs.len()).find(|&r| aa.regs[r] != ab.regs[r]).unwrap();
        return Some(format!(
            "core {core} r{r}: {:#x} vs {:#x}",
            aa.regs[r], ab.regs[r]
        ));
    }
    if (aa.pc, aa.halted, aa.fault, aa.committed) != (ab.pc, ab.halted, ab.fault, ab.committed) {
        return Some(format!(
            "core {core} end state: pc {:#x} halted {} fault {:?} committed {} \
             vs pc {:#x} halted {} fault {:?} committed {}",
            aa.pc, aa.halted, aa.fault, aa.committed, ab.pc, ab.halted, ab.fault, ab.committed
        ));
    }
    None
}

fn first_memory_diff(a: &SparseMem, b: &SparseMem) -> Option<String> {
    let mut addrs: std::collections::BTreeSet<u32> = a.iter_nonzero().map(|(ad, _)| ad).collect();
    addrs.extend(b.iter_nonzero().map(|(ad, _)| ad));
    for ad in addrs {
        let (va, vb) = (a.read_u8(ad), b.read_u8(ad));
        if va != vb {
            return Some(format!("memory[{ad:#x}]: {va:#x} vs {vb:#x}"));
        }
    }
    None
}

/// Architectural comparison of two finished runs: committed memory traffic,
/// final registers and end state per core, then final memory.
pub fn compare_runs(a: &RunOutcome, b: &RunOutcome) -> EquivalenceReport {
    if a.arch.len() != b.arch.len() {
        return EquivalenceReport::diverged(format!(
            "core count: {} vs {}",
            a.arch.len(),
            b.arch.len()
        ));
    }
    for c in 0..a.arch.len() {
        if let Some(msg) = compare_core(c, &a.traces[c], &b.traces[c], &a.arch[c], &b.arch[c]) {
            return EquivalenceReport::diverged(msg);
        }
    }
    if let Some(msg) = first_memory_diff(&a.memory, &b.memory) {
        return EquivalenceReport::diverged(msg);
    }
    EquivalenceReport::ok()
}

/// Independent per-core reference runs plus the final memory they predict.
///
/// Each core interprets against its own copy of the initial image, so the
/// prediction is only valid for programs whose cores never read a location
/// another core writes; the fuzzer and the directed tests generate exactly
/// that shape. Final memory is the image plus every core's committed
/// stores, which commutes for disjoint write sets.
pub struct Reference {
    pub per_core: Vec<(Vec<TraceEntry>, ArchState)>,
    pub memory: SparseMem,
}

pub fn reference_run(prog: &Program, cores: u32) -> Reference {
    let image = SparseMem::from_bytes(&prog.data);
    let mut per_core = Vec::new();
    let mut memory = image.clone();
    for c in 0..cores {
        let mut mem = image.clone();
        let opts = InterpOptions { core_id: c, ..InterpOptions::default() };
        let (trace, arch) = interpret_with(prog, &mut mem, &opts);
        for e in &trace {
            if e.kind == AccessKind::Store {
                memory.write_u32(e.addr, e.value);
            }
        }
        per_core.push((trace, arch));
    }
    Reference { per_core, memory }
}

/// Compare one machine run against the interpreter prediction.
pub fn compare_with_reference(run: &RunOutcome, reference: &Reference) -> EquivalenceReport {
    if run.arch.len() != reference.per_core.len() {
        return EquivalenceReport::diverged(format!(
            "core count: {} vs reference {}",
            run.arch.len(),
            reference.per_core.len()
        ));
    }
    for (c, (rt, ra)) in reference.per_core.iter().enumerate() {
        if let Some(msg) = compare_core(c, &run.traces[c], rt, &run.arch[c], ra) {
            return EquivalenceReport::diverged(msg);
        }
    }
    if let Some(msg) = first_memory_diff(&run.memory, &reference.memory) {
        return EquivalenceReport::diverged(msg);
    }
    EquivalenceReport::ok()
}
