//! Instruction set: a 32-bit, 16-register load/store machine, just rich
//! enough to express cache-timing gadgets (dependent loads, shifted index
//! arithmetic, trained branches, indirect jumps).
//!
//! Instructions occupy 4 bytes each; `pc` is a word-aligned byte address.
//! Loads and stores are word-sized and word-aligned except `LD.B`, which
//! reads a single byte.

mod assemble;
mod interp;

pub use assemble::{assemble, disassemble, AsmError};
pub use interp::{
    access_fault, interpret_reference, interpret_with, ArchState, Fault, FaultKind, InterpOptions,
};

use std::collections::BTreeMap;

pub const NUM_REGS: usize = 16;
pub const INST_BYTES: u32 = 4;
/// Register holding the core id at reset, so one program can drive several
/// cores divergently.
pub const CORE_ID_REG: u8 = 15;

pub type Reg = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AluOp {
    Add,
    Sub,
    Shl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrCond {
    Eq,
    Ne,
}

/// Second source of a 3-operand form: register or immediate, never both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src2 {
    Reg(Reg),
    Imm(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inst {
    Li { rd: Reg, imm: u32 },
    Mov { rd: Reg, rs: Reg },
    Alu { op: AluOp, rd: Reg, rs1: Reg, src2: Src2 },
    /// `byte` selects LD.B (single byte, zero-extended, no alignment rule).
    Ld { rd: Reg, base: Reg, off: i32, byte: bool },
    St { base: Reg, off: i32, rs: Reg },
    Br { cond: BrCond, rs1: Reg, src2: Src2, target: u32 },
    Ji { rs: Reg },
    J { target: u32 },
    Halt,
    Nop,
}

impl Inst {
    pub fn dest_reg(&self) -> Option<Reg> {
        match *self {
            Inst::Li { rd, .. }
            | Inst::Mov { rd, .. }
            | Inst::Alu { rd, .. }
            | Inst::Ld { rd, .. } => Some(rd),
            _ => None,
        }
    }

    pub fn src_regs(&self) -> Vec<Reg> {
        let mut v = Vec::new();
        match *self {
            Inst::Mov { rs, .. } => v.push(rs),
            Inst::Alu { rs1, src2, .. } => {
                v.push(rs1);
                if let Src2::Reg(r) = src2 {
                    v.push(r);
                }
            }
            Inst::Ld { base, .. } => v.push(base),
            Inst::St { base, rs, .. } => {
                v.push(base);
                v.push(rs);
            }
            Inst::Br { rs1, src2, .. } => {
                v.push(rs1);
                if let Src2::Reg(r) = src2 {
                    v.push(r);
                }
            }
            Inst::Ji { rs } => v.push(rs),
            _ => {}
        }
        v
    }

    pub fn is_load(&self) -> bool {
        matches!(self, Inst::Ld { .. })
    }

    pub fn is_store(&self) -> bool {
        matches!(self, Inst::St { .. })
    }

    /// Control-transfer instructions whose outcome is speculated on
    /// (conditional branches and indirect jumps). Direct `J` is not
    /// speculative: its target is known at decode.
    pub fn is_guard(&self) -> bool {
        matches!(self, Inst::Br { .. } | Inst::Ji { .. })
    }
}

/// An assembled program: instructions keyed by pc, plus the initial data
/// image and privileged address ranges.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub insts: BTreeMap<u32, Inst>,
    pub labels: BTreeMap<String, u32>,
    /// Initial memory bytes (address -> byte). Unlisted addresses are zero.
    pub data: BTreeMap<u32, u8>,
    /// Half-open [lo, hi) byte ranges that fault on data access at commit.
    pub priv_ranges: Vec<(u32, u32)>,
    pub entry: u32,
}

impl Program {
    pub fn inst_at(&self, pc: u32) -> Option<Inst> {
        self.insts.get(&pc).copied()
    }

    pub fn is_privileged(&self, addr: u32, size: u32) -> bool {
        let end = addr.saturating_add(size);
        self.priv_ranges.iter().any(|&(lo, hi)| addr < hi && end > lo)
    }

    /// Write a byte into the initial image (used by the attack harness to
    /// plant the secret before a run).
    pub fn poke(&mut self, addr: u32, value: u8) {
        self.data.insert(addr, value);
    }
}
