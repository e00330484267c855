//! Pickle-to-pseudo-source decompiler.
//!
//! The pickle machine is simulated symbolically: imports become references,
//! calls become call nodes, and nothing is imported, called or loaded. The
//! output reads like the Python that unpickling would effectively run.

mod render;
mod sim;

use std::fmt;

use thiserror::Error;

use crate::disasm::Disassembly;

pub use sim::{CallKind, Const, Mutation, NodeId, Simulation, SymNode};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecompileError {
    #[error("disassembly contains no opcode events")]
    EmptyDisassembly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoProgram {
    pub import_lines: Vec<String>,
    /// Distinct `(module, name)` pairs behind `import_lines`, same order.
    pub import_refs: Vec<(String, String)>,
    pub assignments: Vec<String>,
    /// The final `result = ...` line.
    pub result: String,
    pub warnings: Vec<String>,
}

impl fmt::Display for PseudoProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in &self.warnings {
            writeln!(f, "# warning: {}", w.replace('\n', " "))?;
        }
        for line in &self.import_lines {
            writeln!(f, "{line}")?;
        }
        if !self.import_lines.is_empty() {
            writeln!(f)?;
        }
        for line in &self.assignments {
            writeln!(f, "{line}")?;
        }
        writeln!(f, "{}", self.result)
    }
}

pub fn decompile(d: &Disassembly) -> Result<PseudoProgram, DecompileError> {
    if d.events.is_empty() {
        return Err(DecompileError::EmptyDisassembly);
    }
    let sim = Simulation::run(d);
    let r = render::render(&sim);
    Ok(PseudoProgram {
        import_lines: r.imports,
        import_refs: r.import_refs,
        assignments: r.statements,
        result: r.result,
        warnings: r.warnings,
    })
}

/// `(module, name)` for every `GLOBAL`, `STACK_GLOBAL` and `INST`, in stream
/// order with duplicates kept.
pub fn extract_imports(d: &Disassembly) -> Vec<(String, String)> {
    if d.events.is_empty() {
        return Vec::new();
    }
    Simulation::run(d).imports
}
