//! A small Python-subset interpreter backing the in-process fake runner.

pub mod ast;
mod eval;
pub mod format;
mod lexer;
pub mod parser;
pub mod value;

pub use eval::{
    Clock, ExecContext, ExecOutcome, Namespace, ToolFailure, ToolFailureKind, ToolHost,
    FINAL_ANSWER_PREFIX,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub line: usize,
    pub msg: String,
}
