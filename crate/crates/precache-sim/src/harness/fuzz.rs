//! Random-program fuzzing: each case runs on the baseline machine, the
//! quarantine machine and the architectural interpreter, and all three
//! must agree on committed memory traffic, final registers and final
//! memory, with zero structural-invariant violations on either machine.
//!
//! Generated programs terminate by construction: loops count a reserved
//! register up to a small bound, indirect jumps only go forward, and
//! forward always-taken branches are the only other control flow. Shared
//! data is arranged so the outcome is interleaving-independent: a
//! read-only pool any core may read, a contended pool whose blocks are
//! shared but whose words are owned by one core each, and per-core
//! private pools. That keeps the per-core interpreter a valid oracle even
//! for four-core runs.

use super::{compare_runs, compare_with_reference, reference_run, run_program};
use crate::config::{Mode, SimConfig};
use crate::isa::assemble;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

const RO_BASE: u32 = 0x1000;
const CONTENDED_BASE: u32 = 0x2000;
const PRIVATE_BASE: u32 = 0x4000;
const PRIV_LO: u32 = 0x8000;
const PRIV_HI: u32 = 0x8100;

#[derive(Debug, Clone)]
pub struct CaseFailure {
    pub index: u32,
    /// Seed that regenerates this exact program.
    pub seed: u64,
    pub source: String,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct FuzzReport {
    pub seed: u64,
    pub count: u32,
    pub cores: u32,
    pub passed: u32,
    pub failures: Vec<CaseFailure>,
    /// Summed squashed-load pollution across the corpus: [baseline, precache].
    pub pollution: [u64; 2],
}

impl FuzzReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty() && self.passed == self.count
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "fuzz seed={} count={} cores={}: {}/{} equivalent, \
             pollution baseline={} precache={}\n",
            self.seed,
            self.count,
            self.cores,
            self.passed,
            self.count,
            self.pollution[0],
            self.pollution[1],
        );
        for f in &self.failures {
            let _ = write!(
                out,
                "case {} (seed {:#x}) FAILED: {}\n--- program ---\n{}",
                f.index, f.seed, f.detail, f.source
            );
        }
        out
    }
}

/// Run `count` generated programs on `cores` cores; stops at the first
/// failing case so its reproducer is the last thing in the report.
pub fn fuzz(seed: u64, count: u32, cores: u32) -> FuzzReport {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut report =
        FuzzReport { seed, count, cores, passed: 0, failures: Vec::new(), pollution: [0, 0] };
    for index in 0..count {
        let case_seed = master.next_u64();
        let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
        let source = gen_source(&mut rng, cores);
        let paging = rng.gen_bool(0.25);
        match run_case(&source, cores, paging) {
            Ok(pollution) => {
                report.passed += 1;
                report.pollution[0] += pollution[0];
                report.pollution[1] += pollution[1];
            }
            Err(detail) => {
                report.failures.push(CaseFailure { index, seed: case_seed, source, detail });
                break;
            }
        }
    }
    report
}

/// Regenerates one case's program and paging flag, so a crash deep inside a
/// run can be replayed without the report machinery.
pub fn case_source(seed: u64, index: u32, cores: u32) -> (String, bool) {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut case_seed = master.next_u64();
    for _ in 0..index {
        case_seed = master.next_u64();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let source = gen_source(&mut rng, cores);
    let paging = rng.gen_bool(0.25);
    (source, paging)
}

fn run_case(source: &str, cores: u32, paging: bool) -> Result<[u64; 2], String> {
    let prog =
        assemble(source).map_err(|e| format!("generated program does not assemble: {e}"))?;
    let mk = |mode| SimConfig { mode, cores, paging, max_cycles: 300_000, ..SimConfig::default() };
    let base = run_program(&mk(Mode::Baseline), &prog);
    let pre = run_program(&mk(Mode::Precache), &prog);
    for (name, run) in [("baseline", &base), ("precache", &pre)] {
        if run.stats.max_cycles_exceeded {
            return Err(format!("{name}: hit the cycle cap"));
        }
        if !run.violations.is_empty() {
            return Err(format!(
                "{name}: invariant violations: {}",
                run.violations.join("; ")
            ));
        }
    }
    if let Some(d) = compare_runs(&base, &pre).divergence {
        return Err(format!("baseline vs precache: {d}"));
    }
    let reference = reference_run(&prog, cores);
    for (name, run) in [("baseline", &base), ("precache", &pre)] {
        if let Some(d) = compare_with_reference(run, &reference).divergence {
            return Err(format!("{name} vs interpreter: {d}"));
        }
    }
    if pre.stats.polluting_loads != 0 {
        return Err(format!(
            "quarantine mode counted {} polluting squashed loads",
            pre.stats.polluting_loads
        ));
    }
    Ok([base.stats.polluting_loads, pre.stats.polluting_loads])
}

// ---- program generator ----
//
// Register conventions: r1-r10 scratch, r11 loop counter, r12 read-only
// pool base, r13 private pool base, r14 = core id * 4 (contended word
// offset), r15 core id (hardware, never written).

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    out: String,
    labels: u32,
    cores: u32,
    uses_priv: bool,
}

impl Gen<'_> {
    fn line(&mut self, s: &str) {
        self.out.push_str("        ");
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn label(&mut self) -> String {
        self.labels += 1;
        format!("x{}", self.labels)
    }

    fn place(&mut self, name: &str) {
        let _ = writeln!(self.out, "{name}:");
    }

    fn reg(&mut self) -> u8 {
        self.rng.gen_range(1..=10)
    }

    fn any_reg(&mut self) -> u8 {
        self.rng.gen_range(1..=15)
    }

    fn simple(&mut self) {
        match self.rng.gen_range(0u32..100) {
            0..=21 => {
                let op = ["ADD", "SUB", "SHL"][self.rng.gen_range(0..3)];
                let (rd, rs) = (self.reg(), self.any_reg());
                let src2 = if self.rng.gen_bool(0.5) {
                    format!("r{}", self.any_reg())
                } else if op == "SHL" {
                    format!("{}", self.rng.gen_range(0..=8))
                } else {
                    format!("{}", self.rng.gen_range(0..=15))
                };
                self.line(&format!("{op}  r{rd}, r{rs}, {src2}"));
            }
            22..=33 => {
                let (rd, off) = (self.reg(), 4 * self.rng.gen_range(0u32..64));
                self.line(&format!("LD   r{rd}, [r12+{off:#x}]"));
            }
            34..=41 => {
                let (rd, off) = (self.reg(), self.rng.gen_range(0u32..256));
                self.line(&format!("LD.B r{rd}, [r12+{off:#x}]"));
            }
            42..=53 => {
                let (rd, off) = (self.reg(), 4 * self.rng.gen_range(0u32..256));
                self.line(&format!("LD   r{rd}, [r13+{off:#x}]"));
            }
            54..=65 => {
                let (rs, off) = (self.any_reg(), 4 * self.rng.gen_range(0u32..256));
                self.line(&format!("ST   [r13+{off:#x}], r{rs}"));
            }
            66..=73 => {
                let (rs, rd, off) = (self.any_reg(), self.reg(), 4 * self.rng.gen_range(0u32..256));
                self.line(&format!("ST   [r13+{off:#x}], r{rs}"));
                self.line(&format!("LD   r{rd}, [r13+{off:#x}]"));
            }
            74..=83 => {
                // A word this core owns inside the block-shared pool.
                let rt = self.reg();
                let k = self.rng.gen_range(0u32..8);
                let base = CONTENDED_BASE + k * self.cores * 4;
                self.line(&format!("LI   r{rt}, {base:#x}"));
                self.line(&format!("ADD  r{rt}, r{rt}, r14"));
                if self.rng.gen_bool(0.5) {
                    let rs = self.any_reg();
                    self.line(&format!("ST   [r{rt}], r{rs}"));
                } else {
                    let rd = self.reg();
                    self.line(&format!("LD   r{rd}, [r{rt}]"));
                }
            }
            84..=91 => {
                // Address derived from loaded data; pool bytes stay small
                // so the result lands back inside the read-only pool.
                let (rt, rd, off) = (self.reg(), self.reg(), self.rng.gen_range(0u32..16));
                self.line(&format!("LD.B r{rt}, [r12+{off:#x}]"));
                self.line(&format!("SHL  r{rt}, r{rt}, 2"));
                self.line(&format!("ADD  r{rt}, r{rt}, r12"));
                self.line(&format!("LD   r{rd}, [r{rt}]"));
            }
            _ => {
                let rd = self.reg();
                if self.rng.gen_bool(0.5) {
                    let v = self.rng.gen_range(0u32..0x1_0000);
                    self.line(&format!("LI   r{rd}, {v:#x}"));
                } else {
                    let rs = self.any_reg();
                    self.line(&format!("MOV  r{rd}, r{rs}"));
                }
            }
        }
    }

    /// Instructions only ever reached transiently: the generator guarantees
    /// the guarding branch or jump always skips them at commit.
    fn junk(&mut self) {
        if self.rng.gen_bool(0.33) {
            let rd = self.reg();
            self.line(&format!("LI   r{rd}, {PRIV_LO:#x}"));
            self.line(&format!("LD   r{rd}, [r{rd}]"));
            self.uses_priv = true;
        } else {
            self.simple();
        }
    }

    fn segment(&mut self) {
        match self.rng.gen_range(0u32..10) {
            0..=3 => {
                for _ in 0..self.rng.gen_range(3..=8) {
                    self.simple();
                }
            }
            4..=5 => {
                let l = self.label();
                let trips = self.rng.gen_range(2u32..=5);
                self.line("LI   r11, 0");
                self.place(&l);
                for _ in 0..self.rng.gen_range(2..=4) {
                    self.simple();
                }
                self.line("ADD  r11, r11, 1");
                self.line(&format!("BNE  r11, {trips}, {l}"));
            }
            6..=7 => {
                // Always-taken skip; the body only runs on the wrong path.
                let (rt, v) = (self.reg(), self.rng.gen_range(0u32..=15));
                let l = self.label();
                self.line(&format!("LI   r{rt}, {v}"));
                self.line(&format!("BEQ  r{rt}, {v}, {l}"));
                for _ in 0..self.rng.gen_range(1..=3) {
                    self.junk();
                }
                self.place(&l);
            }
            _ => {
                // Forward indirect hop; the fall-through only runs on the
                // wrong path until the target predictor warms up.
                let rt = self.reg();
                let l = self.label();
                self.line(&format!("LI   r{rt}, {l}"));
                self.line(&format!("JI   r{rt}"));
                for _ in 0..self.rng.gen_range(1..=2) {
                    self.junk();
                }
                self.place(&l);
            }
        }
    }
}

fn gen_source(rng: &mut ChaCha8Rng, cores: u32) -> String {
    let data: Vec<u8> = (0..16).map(|_| rng.gen_range(0u8..0x40)).collect();
    let mut g = Gen { rng, out: String::new(), labels: 0, cores, uses_priv: false };

    g.line(&format!("LI   r12, {RO_BASE:#x}"));
    g.line(&format!("LI   r13, {PRIVATE_BASE:#x}"));
    g.line("SHL  r1, r15, 10");
    g.line("ADD  r13, r13, r1");
    g.line("SHL  r14, r15, 2");

    for _ in 0..g.rng.gen_range(3..=7) {
        g.segment();
    }
    if g.rng.gen_bool(1.0 / 6.0) {
        // End one run in six at the privilege check instead of HALT.
        g.line(&format!("LI   r9, {PRIV_LO:#x}"));
        g.line("LD   r9, [r9]");
        g.uses_priv = true;
    }
    g.line("HALT");

    let mut out = g.out;
    out.push('\n');
    let bytes: Vec<String> = data.iter().map(|b| format!("{b:#x}")).collect();
    let _ = writeln!(out, ".data {RO_BASE:#x}: {}", bytes.join(" "));
    if g.uses_priv {
        let _ = writeln!(out, ".priv {PRIV_LO:#x} {PRIV_HI:#x}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_programs_assemble() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = gen_source(&mut rng, 4);
            assemble(&src).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{src}"));
        }
    }

    #[test]
    fn small_corpus_is_three_way_equivalent() {
        let r = fuzz(7, 6, 2);
        assert!(r.all_passed(), "{}", r.render());
    }

    #[test]
    fn fuzz_reports_are_deterministic() {
        let a = fuzz(3, 4, 1);
        let b = fuzz(3, 4, 1);
        assert_eq!(a.render(), b.render());
        assert!(a.all_passed(), "{}", a.render());
    }
}
