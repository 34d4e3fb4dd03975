//! The choreography language: syntax, parsing and static checks.

pub mod ast;
pub mod check;
pub mod diag;
pub mod global;
pub mod lexer;
pub mod parser;
pub mod pattern;

pub use ast::*;
pub use parser::{parse, parse_impls, parse_named, parse_values, ParseError};
pub use pattern::{match_pattern, pattern_vars, PatternVars};
