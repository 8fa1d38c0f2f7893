//! Lexer, parser, pretty-printer and probe extraction for the bpftrace subset
//! used by the synthesis pipeline, extended with `assume(...)` and
//! `assert(...)` statements.
//!
//! Supported: probe clauses (`kprobe`, `kretprobe`, `tracepoint`, `uprobe`,
//! `uretprobe`) with an optional `/predicate/`, scratch and map assignment,
//! `delete`, `printf`, `if`/`else`, literal-bounded `unroll`, and the
//! annotation statements. There are no `while` loops and no user functions.

mod ast;
mod lexer;
mod parser;
mod render;

pub use ast::*;
pub use parser::{parse, parse_expr};
pub use render::{render, render_expr};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{column}: {message}")]
    Syntax { line: u32, column: u32, message: String },
    #[error("no probe clause found")]
    EmptyProgram,
}

impl ParseError {
    pub fn line(&self) -> Option<u32> {
        match self {
            ParseError::Syntax { line, .. } => Some(*line),
            ParseError::EmptyProgram => None,
        }
    }
}

/// Every attach point in source order; duplicates are kept.
pub fn extract_probes(p: &Program) -> Vec<ProbeSpec> {
    p.clauses.iter().flat_map(|c| c.attach_points.iter().cloned()).collect()
}

/// Remove every `assume`/`assert` statement, at any nesting depth, keeping
/// everything else in order. Clauses left with an empty body are retained.
pub fn strip_annotations(p: &Program) -> Program {
    Program {
        clauses: p
            .clauses
            .iter()
            .map(|c| ProbeClause {
                attach_points: c.attach_points.clone(),
                predicate: c.predicate.clone(),
                body: strip_block(&c.body),
                span: c.span,
            })
            .collect(),
    }
}

fn strip_block(stmts: &[Stmt]) -> Vec<Stmt> {
    stmts
        .iter()
        .filter(|s| !s.is_annotation())
        .map(|s| {
            let kind = match &s.kind {
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                } => StmtKind::If {
                    cond: cond.clone(),
                    then_body: strip_block(then_body),
                    else_body: strip_block(else_body),
                },
                StmtKind::Unroll { count, body } => StmtKind::Unroll {
                    count: *count,
                    body: strip_block(body),
                },
                other => other.clone(),
            };
            Stmt { kind, span: s.span }
        })
        .collect()
}

/// Number of `assume`/`assert` statements anywhere in the program.
pub fn count_annotations(p: &Program) -> usize {
    let mut n = 0;
    p.visit_stmts(&mut |s| {
        if s.is_annotation() {
            n += 1;
        }
    });
    n
}
