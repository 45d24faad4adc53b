//! Cycle-level multi-core CPU simulator with a quarantine-buffer ("pre-cache")
//! defense against transient-execution cache attacks.
//!
//! The machine model is a small out-of-order pipeline per core over an
//! inclusive three-level MESI hierarchy. In `precache` mode, blocks fetched by
//! speculative loads are held in a per-core quarantine buffer and only written
//! into the caches when the load commits (store-to-cache); squashes clear the
//! quarantine, so transient accesses leave no cache footprint. `baseline` mode
//! models the conventional fill-at-access behavior the defense is measured
//! against.
//!
//! Programs are written in a tiny assembly dialect (`.pasm`, see [`isa`]), and
//! a golden architectural interpreter provides the reference behavior the
//! pipeline is checked against.

pub mod config;
pub mod dump;
pub mod harness;
pub mod isa;
pub mod machine;
pub mod mem;
pub mod pipeline;
pub mod precache;
pub mod predictor;
pub mod scan;
pub mod sparse;
pub mod stats;
pub mod trace;

pub use config::{Mode, SimConfig};
pub use isa::{assemble, disassemble, interpret_reference, Program};
pub use machine::Machine;
pub use trace::TraceEntry;
