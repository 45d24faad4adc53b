//! The four built-in leak gadgets and the dump-diff oracle that judges them.
//!
//! Each gadget is run once per probe byte value with everything else held
//! fixed. After the run fully drains, every cache-like structure is dumped
//! to text; the secret is "observable" exactly when those dumps differ
//! across byte values or contain the probe block a byte value selects.
//! The oracle never looks at pipeline state, so a gadget that fails to
//! speculate at all comes out inconclusive rather than falsely contained.

use crate::config::{Mode, SimConfig};
use crate::dump;
use crate::isa::assemble;
use crate::machine::Machine;
use crate::stats::Stats;
use std::fmt;

/// The two byte values each gadget is run with.
pub const SECRETS: [u8; 2] = [0x53, 0x7a];

/// Base of the 256-page probe region every gadget encodes into.
pub const PROBE_BASE: u32 = 0x10_0000;

pub const PAGE_SIZE: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gadget {
    Meltdown,
    Spectre,
    IMeltdown,
    ISpectre,
}

impl Gadget {
    pub const ALL: [Gadget; 4] =
        [Gadget::Meltdown, Gadget::Spectre, Gadget::IMeltdown, Gadget::ISpectre];

    pub fn name(self) -> &'static str {
        match self {
            Gadget::Meltdown => "meltdown",
            Gadget::Spectre => "spectre",
            Gadget::IMeltdown => "imeltdown",
            Gadget::ISpectre => "ispectre",
        }
    }

    pub fn parse(s: &str) -> Option<Gadget> {
        Gadget::ALL.into_iter().find(|g| g.name() == s)
    }

    pub fn source(self) -> &'static str {
        match self {
            Gadget::Meltdown => include_str!("../../gadgets/meltdown.pasm"),
            Gadget::Spectre => include_str!("../../gadgets/spectre.pasm"),
            Gadget::IMeltdown => include_str!("../../gadgets/imeltdown.pasm"),
            Gadget::ISpectre => include_str!("../../gadgets/ispectre.pasm"),
        }
    }

    /// Where the probe byte lives: a privileged address for the faulting
    /// variants, one slot past the trained bound for the loop variants.
    pub fn secret_addr(self) -> u32 {
        match self {
            Gadget::Meltdown | Gadget::IMeltdown => 0x8000,
            Gadget::Spectre | Gadget::ISpectre => 0x4064,
        }
    }

    /// Whether the probe is an instruction fetch rather than a data load.
    pub fn instruction_side(self) -> bool {
        matches!(self, Gadget::IMeltdown | Gadget::ISpectre)
    }

    /// The faulting variants run with paging on so speculative translations
    /// are part of the dump surface; the loop variants keep the transient
    /// window free of walk latency.
    fn paging(self) -> bool {
        matches!(self, Gadget::Meltdown | Gadget::IMeltdown)
    }

    /// Count of transient probe-side accesses that provably issued and were
    /// squashed; zero means the gadget never speculated.
    fn transient_evidence(self, stats: &Stats) -> u64 {
        if self.instruction_side() {
            stats.squashed_ifetches
        } else {
            stats.squashed_loads
        }
    }
}

impl fmt::Display for Gadget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn probe_block(secret: u8) -> u32 {
    PROBE_BASE + u32::from(secret) * PAGE_SIZE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// The dumps differ by secret or contain a probe block.
    SecretObservable,
    /// Speculation provably happened and no secret-dependent state remained.
    Contained,
    /// The transient access never issued, so the run proves nothing.
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::SecretObservable => "secret observable",
            Verdict::Contained => "contained",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone)]
pub struct AttackReport {
    pub gadget: Gadget,
    pub mode: Mode,
    pub secrets: [u8; 2],
    /// Post-drain structure dumps, one per secret.
    pub dumps: [String; 2],
    /// Pure function of the dumps: they differ across secrets, or either
    /// one contains its secret's probe block.
    pub secret_observable: bool,
    /// Per-run transient evidence counts; any zero makes the run
    /// inconclusive rather than contained.
    pub transient_probes: [u64; 2],
    pub stats: [Stats; 2],
}

impl AttackReport {
    pub fn speculation_triggered(&self) -> bool {
        self.transient_probes.iter().all(|&n| n > 0)
    }

    pub fn verdict(&self) -> Verdict {
        if self.secret_observable {
            Verdict::SecretObservable
        } else if self.speculation_triggered() {
            Verdict::Contained
        } else {
            Verdict::Inconclusive
        }
    }

    pub fn render(&self) -> String {
        format!(
            "gadget: {}\nmode: {}\nsecrets: {:#04x} {:#04x}\ndumps identical: {}\n\
             probe block present: {} {}\ntransient probes: {} {}\n\
             secret observable: {}\nverdict: {}\n",
            self.gadget,
            self.mode,
            self.secrets[0],
            self.secrets[1],
            self.dumps[0] == self.dumps[1],
            dump_has_probe(&self.dumps[0], self.secrets[0]),
            dump_has_probe(&self.dumps[1], self.secrets[1]),
            self.transient_probes[0],
            self.transient_probes[1],
            self.secret_observable,
            self.verdict(),
        )
    }
}

fn dump_has_probe(dump: &str, secret: u8) -> bool {
    dump::cache_blocks(dump).contains(&probe_block(secret))
}

pub fn run_attack(gadget: Gadget, mode: Mode) -> AttackReport {
    let mut dumps = [String::new(), String::new()];
    let mut probes = [0u64; 2];
    let mut stats = [Stats::default(); 2];
    for (i, &secret) in SECRETS.iter().enumerate() {
        let mut prog = assemble(gadget.source()).expect("gadget assembles");
        prog.poke(gadget.secret_addr(), secret);
        let cfg = SimConfig { mode, paging: gadget.paging(), ..SimConfig::default() };
        let mut m = Machine::new(cfg, prog);
        m.run();
        assert!(!m.stats().max_cycles_exceeded, "gadget run must finish");
        dumps[i] = dump::render(&m).expect("attack run drained");
        probes[i] = gadget.transient_evidence(m.stats());
        stats[i] = *m.stats();
    }
    let probe_seen =
        SECRETS.iter().zip(&dumps).any(|(&s, d)| dump_has_probe(d, s));
    let secret_observable = dumps[0] != dumps[1] || probe_seen;
    AttackReport {
        gadget,
        mode,
        secrets: SECRETS,
        dumps,
        secret_observable,
        transient_probes: probes,
        stats,
    }
}
