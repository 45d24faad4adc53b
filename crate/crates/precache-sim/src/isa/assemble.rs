//! Two-pass assembler for the `.pasm` dialect, plus a disassembler whose
//! output reassembles to an identical [`Program`].
//!
//! Syntax, one statement per line, `;` starts a comment:
//!
//! ```text
//! start:  LI   r1, 0x40        ; imm may be a number or a label
//!         ADD  r2, r1, 4
//!         LD   r3, [r1+8]
//!         LD.B r4, [r3]
//!         ST   [r1+12], r3
//!         BNE  r2, r3, start
//!         JI   r1
//!         J    start
//!         HALT
//! .org  0x1000                 ; move the location counter
//! .data 0x2000: 1 2 0xff       ; initial memory bytes
//! .priv 0x8000 0x9000          ; privileged range [lo, hi)
//! ```

use super::{AluOp, BrCond, Inst, Program, Src2, INST_BYTES, NUM_REGS};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("line {line}: {msg}")]
pub struct AsmError {
    pub line: usize,
    pub msg: String,
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, AsmError> {
    Err(AsmError { line, msg: msg.into() })
}

/// Operand that may be a number now or a label resolved in pass two.
#[derive(Debug, Clone)]
enum NumOrLabel {
    Num(u32),
    Label(String),
}

#[derive(Debug)]
enum RawInst {
    Done(Inst),
    Li { rd: u8, imm: NumOrLabel },
    Br { cond: BrCond, rs1: u8, src2: Src2, target: NumOrLabel },
    J { target: NumOrLabel },
}

pub fn assemble(src: &str) -> Result<Program, AsmError> {
    let mut prog = Program::default();
    let mut pending: Vec<(usize, u32, RawInst)> = Vec::new();
    let mut lc: u32 = 0;
    let mut entry: Option<u32> = None;

    for (idx, raw_line) in src.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw_line.find(';') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        };
        let mut rest = line.trim();
        if rest.is_empty() {
            continue;
        }

        if let Some(dir) = rest.strip_prefix('.') {
            parse_directive(dir, lineno, &mut prog, &mut lc)?;
            continue;
        }

        // Leading labels, possibly several on one line.
        while let Some(colon) = find_label_colon(rest) {
            let name = rest[..colon].trim();
            if !is_ident(name) {
                return err(lineno, format!("bad label name `{name}`"));
            }
            if prog.labels.insert(name.to_string(), lc).is_some() {
                return err(lineno, format!("duplicate label `{name}`"));
            }
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }

        let inst = parse_inst(rest, lineno)?;
        if lc % INST_BYTES != 0 {
            return err(lineno, "instruction address not 4-aligned");
        }
        entry.get_or_insert(lc);
        pending.push((lineno, lc, inst));
        lc = lc.wrapping_add(INST_BYTES);
    }

    for (lineno, pc, raw) in pending {
        let inst = match raw {
            RawInst::Done(i) => i,
            RawInst::Li { rd, imm } => Inst::Li { rd, imm: resolve(&imm, &prog.labels, lineno)? },
            RawInst::Br { cond, rs1, src2, target } => {
                Inst::Br { cond, rs1, src2, target: resolve(&target, &prog.labels, lineno)? }
            }
            RawInst::J { target } => Inst::J { target: resolve(&target, &prog.labels, lineno)? },
        };
        if prog.insts.insert(pc, inst).is_some() {
            return err(lineno, format!("two instructions at address {pc:#x}"));
        }
    }

    prog.entry = entry.unwrap_or(0);
    Ok(prog)
}

fn find_label_colon(s: &str) -> Option<usize> {
    // A colon ends a label only if everything before it is an identifier.
    let p = s.find(':')?;
    is_ident(s[..p].trim()).then_some(p)
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_directive(dir: &str, lineno: usize, prog: &mut Program, lc: &mut u32) -> Result<(), AsmError> {
    let (name, rest) = match dir.find(char::is_whitespace) {
        Some(p) => (&dir[..p], dir[p..].trim()),
        None => (dir, ""),
    };
    match name {
        "org" => {
            let addr = parse_num(rest, lineno)?;
            if addr % INST_BYTES != 0 {
                return err(lineno, ".org address not 4-aligned");
            }
            *lc = addr;
            Ok(())
        }
        "data" => {
            let Some((addr_s, bytes_s)) = rest.split_once(':') else {
                return err(lineno, ".data needs `ADDR: byte...`");
            };
            let mut addr = parse_num(addr_s.trim(), lineno)?;
            for tok in bytes_s.split_whitespace() {
                let v = parse_num(tok, lineno)?;
                if v > 0xff {
                    return err(lineno, format!("data byte {v:#x} out of range"));
                }
                if prog.data.insert(addr, v as u8).is_some() {
                    return err(lineno, format!("data byte at {addr:#x} defined twice"));
                }
                addr = addr.wrapping_add(1);
            }
            Ok(())
        }
        "priv" => {
            let mut it = rest.split_whitespace();
            let (Some(lo), Some(hi), None) = (it.next(), it.next(), it.next()) else {
                return err(lineno, ".priv needs `LO HI`");
            };
            let (lo, hi) = (parse_num(lo, lineno)?, parse_num(hi, lineno)?);
            if lo >= hi {
                return err(lineno, ".priv range is empty");
            }
            prog.priv_ranges.push((lo, hi));
            Ok(())
        }
        _ => err(lineno, format!("unknown directive `.{name}`")),
    }
}

fn parse_inst(s: &str, lineno: usize) -> Result<RawInst, AsmError> {
    let (mn, rest) = match s.find(char::is_whitespace) {
        Some(p) => (&s[..p], s[p..].trim()),
        None => (s, ""),
    };
    let mn_up = mn.to_ascii_uppercase();
    let ops: Vec<&str> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let want = |n: usize| -> Result<(), AsmError> {
        if ops.len() == n {
            Ok(())
        } else {
            err(lineno, format!("{mn_up} takes {n} operand(s), got {}", ops.len()))
        }
    };

    match mn_up.as_str() {
        "LI" => {
            want(2)?;
            Ok(RawInst::Li { rd: parse_reg(ops[0], lineno)?, imm: parse_num_or_label(ops[1], lineno)? })
        }
        "MOV" => {
            want(2)?;
            Ok(RawInst::Done(Inst::Mov { rd: parse_reg(ops[0], lineno)?, rs: parse_reg(ops[1], lineno)? }))
        }
        "ADD" | "SUB" | "SHL" => {
            want(3)?;
            let op = match mn_up.as_str() {
                "ADD" => AluOp::Add,
                "SUB" => AluOp::Sub,
                _ => AluOp::Shl,
            };
            Ok(RawInst::Done(Inst::Alu {
                op,
                rd: parse_reg(ops[0], lineno)?,
                rs1: parse_reg(ops[1], lineno)?,
                src2: parse_src2(ops[2], lineno)?,
            }))
        }
        "LD" | "LD.B" => {
            want(2)?;
            let byte = mn_up == "LD.B";
            let (base, off) = parse_mem(ops[1], lineno)?;
            if !byte && off.rem_euclid(4) != 0 {
                return err(lineno, "word load offset not 4-aligned");
            }
            Ok(RawInst::Done(Inst::Ld { rd: parse_reg(ops[0], lineno)?, base, off, byte }))
        }
        "ST" => {
            want(2)?;
            let (base, off) = parse_mem(ops[0], lineno)?;
            if off.rem_euclid(4) != 0 {
                return err(lineno, "store offset not 4-aligned");
            }
            Ok(RawInst::Done(Inst::St { base, off, rs: parse_reg(ops[1], lineno)? }))
        }
        "BEQ" | "BNE" => {
            want(3)?;
            let cond = if mn_up == "BEQ" { BrCond::Eq } else { BrCond::Ne };
            Ok(RawInst::Br {
                cond,
                rs1: parse_reg(ops[0], lineno)?,
                src2: parse_src2(ops[1], lineno)?,
                target: parse_num_or_label(ops[2], lineno)?,
            })
        }
        "JI" => {
            want(1)?;
            Ok(RawInst::Done(Inst::Ji { rs: parse_reg(ops[0], lineno)? }))
        }
        "J" => {
            want(1)?;
            Ok(RawInst::J { target: parse_num_or_label(ops[0], lineno)? })
        }
        "HALT" => {
            want(0)?;
            Ok(RawInst::Done(Inst::Halt))
        }
        "NOP" => {
            want(0)?;
            Ok(RawInst::Done(Inst::Nop))
        }
        _ => err(lineno, format!("unknown mnemonic `{mn}`")),
    }
}

fn parse_reg(s: &str, lineno: usize) -> Result<u8, AsmError> {
    let t = s.trim();
    let digits = t
        .strip_prefix('r')
        .or_else(|| t.strip_prefix('R'))
        .ok_or_else(|| AsmError { line: lineno, msg: format!("expected register, got `{t}`") })?;
    match digits.parse::<usize>() {
        Ok(n) if n < NUM_REGS => Ok(n as u8),
        _ => err(lineno, format!("register index out of range in `{t}`")),
    }
}

fn parse_num(s: &str, lineno: usize) -> Result<u32, AsmError> {
    let t = s.trim();
    let (neg, t) = match t.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, t),
    };
    let v = if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u32::from_str_radix(h, 16)
    } else {
        t.parse::<u32>()
    };
    match v {
        Ok(v) if neg => Ok((v as i64).wrapping_neg() as u32),
        Ok(v) => Ok(v),
        Err(_) => err(lineno, format!("bad number `{s}`")),
    }
}

fn is_reg_token(t: &str) -> bool {
    (t.starts_with('r') || t.starts_with('R'))
        && t.len() > 1
        && t[1..].chars().all(|c| c.is_ascii_digit())
}

fn parse_num_or_label(s: &str, lineno: usize) -> Result<NumOrLabel, AsmError> {
    let t = s.trim();
    if is_ident(t) {
        // Identifiers like `retry` start with r; only rN forms are registers.
        if is_reg_token(t) {
            return err(lineno, format!("expected number or label, got register `{t}`"));
        }
        return Ok(NumOrLabel::Label(t.to_string()));
    }
    parse_num(t, lineno).map(NumOrLabel::Num)
}

fn parse_src2(s: &str, lineno: usize) -> Result<Src2, AsmError> {
    let t = s.trim();
    if is_reg_token(t) {
        return parse_reg(t, lineno).map(Src2::Reg);
    }
    parse_num(t, lineno).map(Src2::Imm)
}

fn parse_mem(s: &str, lineno: usize) -> Result<(u8, i32), AsmError> {
    let t = s.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|x| x.strip_suffix(']'))
        .ok_or_else(|| AsmError { line: lineno, msg: format!("expected `[rN+off]`, got `{t}`") })?
        .trim();
    if let Some(p) = inner.find(['+', '-']) {
        let sign = if inner.as_bytes()[p] == b'-' { -1i64 } else { 1 };
        let base = parse_reg(&inner[..p], lineno)?;
        let off = parse_num(inner[p + 1..].trim(), lineno)? as i64 * sign;
        if off < i32::MIN as i64 || off > i32::MAX as i64 {
            return err(lineno, "offset out of range");
        }
        Ok((base, off as i32))
    } else {
        Ok((parse_reg(inner, lineno)?, 0))
    }
}

fn resolve(v: &NumOrLabel, labels: &BTreeMap<String, u32>, lineno: usize) -> Result<u32, AsmError> {
    match v {
        NumOrLabel::Num(n) => Ok(*n),
        NumOrLabel::Label(name) => labels
            .get(name)
            .copied()
            .ok_or_else(|| AsmError { line: lineno, msg: format!("unresolved label `{name}`") }),
    }
}

/// Render a program as source text that assembles back to an equal value.
pub fn disassemble(p: &Program) -> String {
    let mut out = String::new();
    for &(lo, hi) in &p.priv_ranges {
        let _ = writeln!(out, ".priv {lo:#x} {hi:#x}");
    }

    let mut by_addr: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for (name, &addr) in &p.labels {
        by_addr.entry(addr).or_default().push(name);
    }

    // Entry-first so reassembly reproduces `entry`; both rotated halves stay
    // ascending, so `.org` runs come out contiguous.
    let mut order: Vec<u32> = p.insts.keys().copied().collect();
    if let Some(pos) = order.iter().position(|&pc| pc == p.entry) {
        order.rotate_left(pos);
    }
    let mut expect: Option<u32> = None;
    for pc in order {
        if expect != Some(pc) {
            let _ = writeln!(out, ".org {pc:#x}");
        }
        if let Some(names) = by_addr.get(&pc) {
            for n in names {
                let _ = writeln!(out, "{n}:");
            }
        }
        let _ = writeln!(out, "    {}", render_inst(&p.insts[&pc]));
        expect = Some(pc.wrapping_add(INST_BYTES));
    }
    // Labels that point outside the instruction stream.
    for (addr, names) in &by_addr {
        if !p.insts.contains_key(addr) {
            let _ = writeln!(out, ".org {addr:#x}");
            for n in names {
                let _ = writeln!(out, "{n}:");
            }
        }
    }

    let mut run_start: Option<u32> = None;
    let mut run: Vec<u8> = Vec::new();
    let flush = |start: &mut Option<u32>, run: &mut Vec<u8>, out: &mut String| {
        if let Some(s) = *start {
            let bytes: Vec<String> = run.iter().map(|b| format!("{b:#x}")).collect();
            let _ = writeln!(out, ".data {s:#x}: {}", bytes.join(" "));
        }
        *start = None;
        run.clear();
    };
    let mut prev: Option<u32> = None;
    for (&addr, &b) in &p.data {
        if prev.map(|p| p.wrapping_add(1)) != Some(addr) {
            flush(&mut run_start, &mut run, &mut out);
            run_start = Some(addr);
        }
        run.push(b);
        prev = Some(addr);
    }
    flush(&mut run_start, &mut run, &mut out);
    out
}

fn render_inst(i: &Inst) -> String {
    let src2 = |s: &Src2| match s {
        Src2::Reg(r) => format!("r{r}"),
        Src2::Imm(v) => format!("{v:#x}"),
    };
    match i {
        Inst::Li { rd, imm } => format!("LI r{rd}, {imm:#x}"),
        Inst::Mov { rd, rs } => format!("MOV r{rd}, r{rs}"),
        Inst::Alu { op, rd, rs1, src2: s } => {
            let m = match op {
                AluOp::Add => "ADD",
                AluOp::Sub => "SUB",
                AluOp::Shl => "SHL",
            };
            format!("{m} r{rd}, r{rs1}, {}", src2(s))
        }
        Inst::Ld { rd, base, off, byte } => {
            let m = if *byte { "LD.B" } else { "LD" };
            format!("{m} r{rd}, [r{base}{off:+}]")
        }
        Inst::St { base, off, rs } => format!("ST [r{base}{off:+}], r{rs}"),
        Inst::Br { cond, rs1, src2: s, target } => {
            let m = if *cond == BrCond::Eq { "BEQ" } else { "BNE" };
            format!("{m} r{rs1}, {}, {target:#x}", src2(s))
        }
        Inst::Ji { rs } => format!("JI r{rs}"),
        Inst::J { target } => format!("J {target:#x}"),
        Inst::Halt => "HALT".to_string(),
        Inst::Nop => "NOP".to_string(),
    }
}
