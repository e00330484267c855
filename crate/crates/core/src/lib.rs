//! Static scanner for pickle-based model files.
//!
//! Pickle streams are disassembled, never executed. The pipeline unwraps
//! container layers, turns each embedded pickle into a normalized
//! opcode-frequency vector, and scores it with a random forest, an isolation
//! forest or a local-outlier-factor model. A rule-based import scanner and a
//! pickle-to-pseudo-source decompiler support triage.

pub mod corpus;
pub mod decompiler;
pub mod disasm;
pub mod features;
pub mod ml;
pub mod opcodes;
pub mod scan;
mod pyrepr;
pub mod unwrap;

pub use disasm::{disassemble, disassemble_all, Disassembly, MalformReason, OpArg, OpcodeEvent};
pub use opcodes::{opcode_vocabulary, OpcodeDescriptor, VOCABULARY_SIZE};
