//! The program language: syntax tree, parser, printer, scalar evaluation and
//! the brute-force iteration-space enumerator.
//!
//! Programs are line-oriented and indentation-structured:
//!
//! ```text
//! program cholesky
//! param N
//! matrix S[3] input
//! matrix O[2] output
//! for i in range(0, N):
//!     O[i, i] = chol(S[i, i, i])
//! ```
//!
//! Each tile index may be written by at most one dynamic kernel call.

mod ast;
mod enumerate;
mod eval;
mod lexer;
mod parser;
mod printer;
mod serialize;

use alloc::string::String;

pub use ast::*;
pub use enumerate::{
    enumerate_accesses, enumerate_nodes, output_tiles, range_values, validate_ssa, EnumError, NodeAccess, SsaViolation,
    TileRef, ValidationError,
};
pub use eval::{eval, eval_int, eval_scalar, DivMode, EvalError, Value};
pub use parser::{parse_expr, parse_program};
pub use serialize::DecodeError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownKernel(String),
    UnknownMatrix(String),
    MatrixArity { matrix: String, expected: usize, found: usize },
    KernelArity { kernel: String, inputs: usize, outputs: usize },
    UndefinedVariable(String),
    Redefined(String),
    NestedFunction,
    Recursion(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    pub(crate) fn new(line: usize, col: usize, msg: impl Into<String>) -> Self {
        Self { line, col, kind: ParseErrorKind::Syntax(msg.into()) }
    }
}

impl core::fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ParseErrorKind::Syntax(m) => write!(f, "syntax error: {m}"),
            ParseErrorKind::UnknownKernel(k) => write!(f, "unknown kernel `{k}`"),
            ParseErrorKind::UnknownMatrix(m) => write!(f, "undeclared matrix `{m}`"),
            ParseErrorKind::MatrixArity { matrix, expected, found } => {
                write!(f, "matrix `{matrix}` takes {expected} indices, got {found}")
            }
            ParseErrorKind::KernelArity { kernel, inputs, outputs } => {
                write!(f, "kernel `{kernel}` cannot be called with {inputs} tile input(s) and {outputs} output(s)")
            }
            ParseErrorKind::UndefinedVariable(v) => write!(f, "undefined variable `{v}`"),
            ParseErrorKind::Redefined(v) => write!(f, "`{v}` is already defined"),
            ParseErrorKind::NestedFunction => f.write_str("nested function definitions are not supported"),
            ParseErrorKind::Recursion(n) => write!(f, "recursive call to `{n}`"),
        }
    }
}
