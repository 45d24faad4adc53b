//! In-order reference interpreter.
//!
//! Executes a [`Program`] one instruction at a time with no caches, no
//! speculation and no timing. Its commit trace and final architectural state
//! define correctness for the pipelined machine: any run of the same program
//! must match it access for access, whatever microarchitectural path the
//! values took.

use super::{AluOp, BrCond, Inst, Program, Src2, CORE_ID_REG, INST_BYTES, NUM_REGS};
use crate::sparse::SparseMem;
use crate::trace::{AccessKind, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    /// Data access overlapping a privileged range.
    Privileged,
    /// Word access to a non-4-aligned address.
    Misaligned,
    /// Control reached an address with no instruction.
    Fetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault {
    pub kind: FaultKind,
    /// Address of the instruction that stopped execution.
    pub pc: u32,
    /// Offending data address, or the unfetchable pc itself.
    pub addr: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchState {
    pub regs: [u32; NUM_REGS],
    /// Where execution stopped: the HALT itself, the faulting instruction,
    /// or the next pc when the cap was hit.
    pub pc: u32,
    pub halted: bool,
    pub fault: Option<Fault>,
    /// Instructions that completed; a faulting instruction is not counted.
    pub committed: u64,
    pub hit_cap: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct InterpOptions {
    /// Seeds the core-id register so one program can run on every core.
    pub core_id: u32,
    pub max_insts: u64,
}

impl Default for InterpOptions {
    fn default() -> Self {
        Self { core_id: 0, max_insts: 1_000_000 }
    }
}

/// Run on a fresh memory image built from the program's `.data`.
pub fn interpret_reference(prog: &Program) -> (Vec<TraceEntry>, ArchState) {
    let mut mem = SparseMem::from_bytes(&prog.data);
    interpret_with(prog, &mut mem, &InterpOptions::default())
}

pub fn interpret_with(
    prog: &Program,
    mem: &mut SparseMem,
    opts: &InterpOptions,
) -> (Vec<TraceEntry>, ArchState) {
    let mut st = ArchState {
        regs: [0; NUM_REGS],
        pc: prog.entry,
        halted: false,
        fault: None,
        committed: 0,
        hit_cap: false,
    };
    st.regs[CORE_ID_REG as usize] = opts.core_id;
    let mut trace = Vec::new();

    loop {
        if st.committed >= opts.max_insts {
            st.hit_cap = true;
            return (trace, st);
        }
        let pc = st.pc;
        let Some(inst) = prog.inst_at(pc) else {
            st.fault = Some(Fault { kind: FaultKind::Fetch, pc, addr: pc });
            return (trace, st);
        };

        let src2 = |st: &ArchState, s: &Src2| match s {
            Src2::Reg(r) => st.regs[*r as usize],
            Src2::Imm(v) => *v,
        };
        let mut next_pc = pc.wrapping_add(INST_BYTES);

        match &inst {
            Inst::Li { rd, imm } => st.regs[*rd as usize] = *imm,
            Inst::Mov { rd, rs } => st.regs[*rd as usize] = st.regs[*rs as usize],
            Inst::Alu { op, rd, rs1, src2: s } => {
                let a = st.regs[*rs1 as usize];
                let b = src2(&st, s);
                st.regs[*rd as usize] = match op {
                    AluOp::Add => a.wrapping_add(b),
                    AluOp::Sub => a.wrapping_sub(b),
                    AluOp::Shl => a.wrapping_shl(b),
                };
            }
            Inst::Ld { rd, base, off, byte } => {
                let ea = st.regs[*base as usize].wrapping_add(*off as u32);
                let size: u8 = if *byte { 1 } else { 4 };
                if let Some(f) = access_fault(prog, pc, ea, size) {
                    st.fault = Some(f);
                    return (trace, st);
                }
                let value = if *byte { mem.read_u8(ea) as u32 } else { mem.read_u32(ea) };
                trace.push(TraceEntry { seq: st.committed, kind: AccessKind::Load, addr: ea, size, value });
                st.regs[*rd as usize] = value;
            }
            Inst::St { base, off, rs } => {
                let ea = st.regs[*base as usize].wrapping_add(*off as u32);
                if let Some(f) = access_fault(prog, pc, ea, 4) {
                    st.fault = Some(f);
                    return (trace, st);
                }
                let value = st.regs[*rs as usize];
                mem.write_u32(ea, value);
                trace.push(TraceEntry { seq: st.committed, kind: AccessKind::Store, addr: ea, size: 4, value });
            }
            Inst::Br { cond, rs1, src2: s, target } => {
                let a = st.regs[*rs1 as usize];
                let b = src2(&st, s);
                let taken = match cond {
                    BrCond::Eq => a == b,
                    BrCond::Ne => a != b,
                };
                if taken {
                    next_pc = *target;
                }
            }
            Inst::Ji { rs } => next_pc = st.regs[*rs as usize],
            Inst::J { target } => next_pc = *target,
            Inst::Halt => {
                st.committed += 1;
                st.halted = true;
                return (trace, st);
            }
            Inst::Nop => {}
        }
        st.committed += 1;
        st.pc = next_pc;
    }
}

/// Shared by the pipeline's commit stage so both executions fault on
/// exactly the same accesses.
pub fn access_fault(prog: &Program, pc: u32, ea: u32, size: u8) -> Option<Fault> {
    if size == 4 && ea % 4 != 0 {
        return Some(Fault { kind: FaultKind::Misaligned, pc, addr: ea });
    }
    if prog.is_privileged(ea, size as u32) {
        return Some(Fault { kind: FaultKind::Privileged, pc, addr: ea });
    }
    None
}
