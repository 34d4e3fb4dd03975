//! Rendering of parse and check errors.

use std::fmt::Write;

use super::ast::{ChorProgram, Span};
use super::check::{check_calls, check_knowledge_of_choice, check_located_scope, CallError, KocError, ScopeError};
use super::parser::ParseError;

/// Everything the static checks found in one program.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub scope: Vec<ScopeError>,
    pub koc: Vec<KocError>,
    pub calls: Vec<CallError>,
}

impl Diagnostics {
    pub fn is_empty(&self) -> bool {
        self.scope.is_empty() && self.koc.is_empty() && self.calls.is_empty()
    }

    pub fn render(&self, source: &str) -> String {
        let mut out = String::new();
        for e in &self.scope {
            out.push_str(&render_scope(e, source));
        }
        for e in &self.calls {
            out.push_str(&render_call(e));
        }
        for e in &self.koc {
            out.push_str(&render_koc(e));
        }
        out
    }
}

/// Run all static checks. Knowledge of choice is only examined once scoping
/// and calls are clean.
pub fn check_program(prog: &ChorProgram) -> Diagnostics {
    let scope = check_located_scope(prog);
    let calls = check_calls(prog);
    let koc = if scope.is_empty() && calls.is_empty() { check_knowledge_of_choice(prog) } else { Vec::new() };
    Diagnostics { scope, koc, calls }
}

fn source_line(source: &str, line: u32) -> &str {
    source.lines().nth(line.saturating_sub(1) as usize).unwrap_or("")
}

/// The offending line without its indentation, and a caret row under `span`.
fn excerpt(source: &str, span: &Span) -> (String, String) {
    let raw = source_line(source, span.line);
    let indent = raw.len() - raw.trim_start().len();
    let text = raw.trim().to_string();
    let col = (span.column as usize).saturating_sub(1).saturating_sub(indent);
    let len = (span.length as usize).clamp(1, text.len().saturating_sub(col).max(1));
    (text, format!("{}{}", " ".repeat(col), "^".repeat(len)))
}

pub fn render_scope(e: &ScopeError, source: &str) -> String {
    let (text, carets) = excerpt(source, &e.span);
    let mut out = String::new();
    let _ = writeln!(out, "ERROR: undefined variable \"{}\"", e.var);
    let _ = writeln!(out, "|");
    let _ = writeln!(out, "| {text}");
    let _ = writeln!(out, "| {carets}");
    let _ = writeln!(out, "|");
    let _ = writeln!(out, "|-- {}:{} {}.{}", e.span.file, e.span.line, e.role, e.function);
    if !e.located_at.is_empty() {
        let roles: Vec<_> = e.located_at.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(out, "|-- \"{}\" is located at {}", e.var, roles.join(", "));
    }
    out
}

pub fn render_koc(e: &KocError) -> String {
    format!(
        "** (CompileError) {}:{}: Branches differ for actor {}; `if` block needs to notify\n",
        e.span.file, e.span.line, e.role
    )
}

pub fn render_call(e: &CallError) -> String {
    format!("** (CompileError) {}:{}: {}\n", e.span.file, e.span.line, e.message)
}

pub fn render_parse(e: &ParseError, source: &str) -> String {
    let (text, carets) = excerpt(source, &e.span);
    let mut out = format!("** (SyntaxError) {}: {}", e.span, e.message);
    if let Some(x) = &e.expected {
        let _ = write!(out, " (expected {x})");
    }
    let _ = write!(out, "\n|\n| {text}\n| {carets}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_named;

    #[test]
    fn scope_error_layout() {
        let src = "defchor [A, B, C] do\n  def run() do\n    A.val ~> B.val\n  end\nend\n";
        let prog = parse_named("d.chor", src).unwrap();
        let d = check_program(&prog);
        assert_eq!(
            d.render(src),
            "ERROR: undefined variable \"val\"\n|\n| A.val ~> B.val\n|   ^^^\n|\n|-- d.chor:3 A.run/0\n"
        );
    }

    #[test]
    fn parse_error_points_at_token() {
        let src = "defchor [A] do\n def run() do\n  if A.(1) do A.(2) end\n end\nend";
        let e = parse_named("p.chor", src).unwrap_err();
        let r = render_parse(&e, src);
        assert!(r.starts_with("** (SyntaxError) p.chor:3:"), "{r}");
        assert!(r.contains("else"));
    }
}
