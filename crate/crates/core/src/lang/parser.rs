//! Recursive-descent parser for choreographies (`.chor`) and impl files (`.chim`).

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub span: Span,
    pub message: String,
    /// Hint naming what the parser was looking for.
    pub expected: Option<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.span, self.message)?;
        if let Some(e) = &self.expected {
            write!(f, " (expected {e})")?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseError {}

type PResult<T> = Result<T, ParseError>;

/// Parse a choreography source file.
pub fn parse(source: &str) -> PResult<ChorProgram> {
    parse_named("<input>", source)
}

/// Parse a choreography, recording `file` in every span.
pub fn parse_named(file: &str, source: &str) -> PResult<ChorProgram> {
    let mut p = Parser::new(file, source)?;
    p.program()
}

/// Parse an impl file holding one or more `defimpl Role do ... end` blocks.
pub fn parse_impls(file: &str, source: &str) -> PResult<Vec<ImplModule>> {
    let mut p = Parser::new(file, source)?;
    let mut mods = Vec::new();
    while !p.at(&Tok::Eof) {
        mods.push(p.impl_module()?);
    }
    Ok(mods)
}

/// Parse a comma-separated list of constant values, e.g. `true, {1, :a}`.
pub fn parse_values(source: &str) -> PResult<Vec<Value>> {
    let mut p = Parser::new("<args>", source)?;
    let mut out = Vec::new();
    if p.at(&Tok::Eof) {
        return Ok(out);
    }
    loop {
        let span = p.here();
        let e = p.expr()?;
        out.push(const_value(&e).ok_or_else(|| ParseError {
            span,
            message: "argument must be a constant value".into(),
            expected: None,
        })?);
        if !p.eat(&Tok::Comma) {
            break;
        }
    }
    p.expect(&Tok::Eof, "end of arguments")?;
    Ok(out)
}

fn const_value(e: &Expr) -> Option<Value> {
    Some(match e {
        Expr::Lit(v) => v.clone(),
        Expr::Tuple(items) => Value::Tuple(items.iter().map(const_value).collect::<Option<_>>()?),
        Expr::List(items) => Value::List(items.iter().map(const_value).collect::<Option<_>>()?),
        Expr::Unary(UnOp::Neg, inner) => match const_value(inner)? {
            Value::Int(i) => Value::Int(i.checked_neg()?),
            _ => return None,
        },
        Expr::FuncRef(n, a) => Value::FuncRef { name: n.clone(), arity: *a },
        _ => return None,
    })
}

const KEYWORDS: &[&str] = &[
    "defchor",
    "defimpl",
    "def",
    "do",
    "end",
    "if",
    "else",
    "checkpoint",
    "rescue",
    "with",
    "nil",
    "true",
    "false",
    "rem",
    "and",
    "or",
    "not",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    file: Arc<str>,
    roles: Vec<Role>,
    chor_fns: BTreeSet<String>,
    next_site: u32,
    next_ckpt: u32,
}

impl Parser {
    fn new(file: &str, source: &str) -> PResult<Parser> {
        let file: Arc<str> = Arc::from(file);
        let toks = tokenize(source).map_err(|e| ParseError {
            span: Span { file: file.clone(), line: e.line, column: e.column, length: 1 },
            message: e.message,
            expected: None,
        })?;
        Ok(Parser { toks, pos: 0, file, roles: Vec::new(), chor_fns: BTreeSet::new(), next_site: 0, next_ckpt: 0 })
    }

    // ---- token helpers ----

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.at(t) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn span_of(&self, t: &Token) -> Span {
        Span { file: self.file.clone(), line: t.line, column: t.column, length: t.len.max(1) }
    }

    fn here(&self) -> Span {
        self.span_of(&self.toks[self.pos])
    }

    fn error<T>(&self, message: impl Into<String>, expected: Option<&str>) -> PResult<T> {
        Err(ParseError { span: self.here(), message: message.into(), expected: expected.map(str::to_string) })
    }

    fn error_at<T>(&self, span: Span, message: impl Into<String>) -> PResult<T> {
        Err(ParseError { span, message: message.into(), expected: None })
    }

    fn expect(&mut self, t: &Tok, what: &str) -> PResult<Token> {
        if self.at(t) {
            Ok(self.bump())
        } else {
            let found = self.peek().to_string();
            self.error(format!("unexpected {found}"), Some(what))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<Token> {
        if self.at_kw(kw) {
            Ok(self.bump())
        } else {
            let found = self.peek().to_string();
            self.error(format!("unexpected {found}"), Some(&format!("`{kw}`")))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Token)> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let t = self.bump();
                Ok((s, t))
            }
            other => self.error(format!("unexpected {other}"), Some(what)),
        }
    }

    /// Span covering tokens `start..self.pos` that sit on the first token's line.
    fn span_from(&self, start: usize) -> Span {
        let first = &self.toks[start];
        let mut end = first.column + first.len;
        for t in &self.toks[start..self.pos] {
            if t.line == first.line {
                end = end.max(t.column + t.len);
            }
        }
        Span { file: self.file.clone(), line: first.line, column: first.column, length: (end - first.column).max(1) }
    }

    fn role(&mut self) -> PResult<Role> {
        match self.peek().clone() {
            Tok::Upper(name) => {
                let span = self.here();
                self.bump();
                let role = Role(name);
                if !self.roles.is_empty() && !self.roles.contains(&role) {
                    return self.error_at(span, format!("unknown role {role}"));
                }
                Ok(role)
            }
            other => self.error(format!("unexpected {other}"), Some("a role name")),
        }
    }

    // ---- choreography ----

    fn program(&mut self) -> PResult<ChorProgram> {
        let head = self.here();
        self.expect_kw("defchor")?;
        self.expect(&Tok::LBracket, "`[`")?;
        let mut roles = Vec::new();
        loop {
            let span = self.here();
            let r = self.role()?;
            if roles.contains(&r) {
                return self.error_at(span, format!("duplicate role {r}"));
            }
            roles.push(r);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(&Tok::RBracket, "`]`")?;
        self.roles = roles.clone();
        self.expect_kw("do")?;
        self.prescan_functions();

        let mut functions = Vec::new();
        while self.at_kw("def") {
            functions.push(self.function()?);
        }
        self.expect_kw("end")?;
        self.expect(&Tok::Eof, "end of input")?;

        let runs = functions.iter().filter(|f: &&ChorFunction| f.name == "run").count();
        if runs == 0 {
            return self.error_at(head, "choreography has no `run` function");
        }
        if runs > 1 {
            let second = functions.iter().filter(|f| f.name == "run").nth(1).unwrap();
            return self.error_at(second.span.clone(), "only one `run` function is allowed");
        }
        Ok(ChorProgram { file: self.file.clone(), roles, functions })
    }

    fn prescan_functions(&mut self) {
        for w in self.toks.windows(2) {
            if let (Tok::Ident(d), Tok::Ident(name)) = (&w[0].tok, &w[1].tok) {
                if d == "def" {
                    self.chor_fns.insert(name.clone());
                }
            }
        }
    }

    fn function(&mut self) -> PResult<ChorFunction> {
        let start = self.pos;
        self.expect_kw("def")?;
        let (name, _) = self.ident("a function name")?;
        self.expect(&Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if !self.at(&Tok::RParen) {
            loop {
                params.push(self.param()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen, "`)`")?;
        let span = self.span_from(start);
        self.expect_kw("do")?;
        let body = self.stmts()?;
        self.expect_kw("end")?;
        Ok(ChorFunction { name, params, body, span })
    }

    fn param(&mut self) -> PResult<Param> {
        match self.peek() {
            Tok::Upper(_) => {
                let role = self.role()?;
                self.expect(&Tok::Dot, "`.`")?;
                let pat = self.located_pattern()?;
                Ok(Param::Located(role, pat))
            }
            _ => {
                let (name, _) = self.ident("a located parameter or function parameter")?;
                Ok(Param::Func(name))
            }
        }
    }

    fn at_block_end(&self) -> bool {
        self.at_kw("end") || self.at_kw("else") || self.at_kw("rescue") || self.at(&Tok::Eof)
    }

    fn stmts(&mut self) -> PResult<Vec<Stmt>> {
        let mut out = Vec::new();
        loop {
            while self.eat(&Tok::Semi) {}
            if self.at_block_end() {
                return Ok(out);
            }
            out.push(self.stmt()?);
        }
    }

    fn fresh_site(&mut self) -> SiteId {
        let s = SiteId(self.next_site);
        self.next_site += 1;
        s
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let start = self.pos;
        if self.eat_kw("if") {
            return self.if_stmt(start);
        }
        if self.eat_kw("checkpoint") {
            return self.checkpoint_stmt(start);
        }
        if self.eat_kw("with") {
            return self.with_stmt(start);
        }
        match self.peek().clone() {
            Tok::Upper(_) => {
                let role = self.role()?;
                self.expect(&Tok::Dot, "`.`")?;
                let expr = self.located_expr()?;
                if self.eat(&Tok::Arrow) {
                    let rspan = self.here();
                    let receiver = self.role()?;
                    if receiver == role {
                        return self.error_at(rspan, format!("{role} cannot deliver to itself"));
                    }
                    self.expect(&Tok::Dot, "`.`")?;
                    let pattern = self.located_pattern()?;
                    let site = self.fresh_site();
                    Ok(Stmt::Delivery { sender: role, expr, receiver, pattern, site, span: self.span_from(start) })
                } else {
                    Ok(Stmt::Local { role, expr, span: self.span_from(start) })
                }
            }
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                let call = self.chor_call(start)?;
                match call {
                    Some(c) => Ok(Stmt::Call(c)),
                    None => self.error_at(
                        self.span_from(start),
                        format!("`{name}` is not a choreography function; local expressions must be located at a role"),
                    ),
                }
            }
            other => self.error(format!("unexpected {other}"), Some("a statement")),
        }
    }

    /// Parses `f(args)` for a known choreography function or `f.(args)`.
    /// Returns `None` (without consuming) if the upcoming tokens are neither.
    fn chor_call(&mut self, start: usize) -> PResult<Option<ChorCall>> {
        let Tok::Ident(name) = self.peek().clone() else { return Ok(None) };
        let target = match (self.peek_at(1), self.peek_at(2)) {
            (Tok::LParen, _) if self.chor_fns.contains(&name) => {
                self.bump();
                CallTarget::Direct(name)
            }
            (Tok::Dot, Tok::LParen) => {
                self.bump();
                self.bump();
                CallTarget::Indirect(name)
            }
            _ => return Ok(None),
        };
        self.expect(&Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if !self.at(&Tok::RParen) {
            loop {
                args.push(self.chor_arg()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen, "`)`")?;
        Ok(Some(ChorCall { target, args, span: self.span_from(start) }))
    }

    fn chor_arg(&mut self) -> PResult<Arg> {
        match self.peek().clone() {
            Tok::Upper(_) => {
                let role = self.role()?;
                self.expect(&Tok::Dot, "`.`")?;
                Ok(Arg::Located(role, self.located_expr()?))
            }
            Tok::At => {
                let (n, a) = self.func_ref()?;
                Ok(Arg::FuncRef(n, a))
            }
            Tok::Ident(_) => {
                let (name, _) = self.ident("an argument")?;
                Ok(Arg::FuncVar(name))
            }
            other => {
                self.error(format!("unexpected {other}"), Some("a located argument, `@f/n`, or a function parameter"))
            }
        }
    }

    fn func_ref(&mut self) -> PResult<(String, u8)> {
        self.expect(&Tok::At, "`@`")?;
        let (name, _) = self.ident("a function name")?;
        self.expect(&Tok::Slash, "`/`")?;
        match self.peek().clone() {
            Tok::Int(n) if (0..=255).contains(&n) => {
                self.bump();
                Ok((name, n as u8))
            }
            other => self.error(format!("unexpected {other}"), Some("an arity")),
        }
    }

    fn if_stmt(&mut self, start: usize) -> PResult<Stmt> {
        let decider = self.role()?;
        self.expect(&Tok::Dot, "`.`")?;
        let cond = self.located_expr()?;
        let mut notify = None;
        if self.eat(&Tok::Comma) {
            self.expect_kw("notify")?;
            self.expect(&Tok::Colon, "`:`")?;
            self.expect(&Tok::LBracket, "`[`")?;
            let mut list = Vec::new();
            if !self.at(&Tok::RBracket) {
                loop {
                    let span = self.here();
                    let r = self.role()?;
                    if r == decider {
                        return self.error_at(span, format!("`notify` may not name the deciding role {r}"));
                    }
                    if !list.contains(&r) {
                        list.push(r);
                    }
                    if !self.eat(&Tok::Comma) {
                        break;
                    }
                }
            }
            self.expect(&Tok::RBracket, "`]`")?;
            notify = Some(list);
        }
        let span = self.span_from(start);
        self.expect_kw("do")?;
        let site = self.fresh_site();
        let (s0, k0) = (self.next_site, self.next_ckpt);
        let then_branch = self.stmts()?;
        let (s1, k1) = (self.next_site, self.next_ckpt);
        if !self.at_kw("else") {
            return self.error("`if` requires an `else` branch", Some("`else`"));
        }
        self.bump();
        self.next_site = s0;
        self.next_ckpt = k0;
        let else_branch = self.stmts()?;
        self.next_site = self.next_site.max(s1);
        self.next_ckpt = self.next_ckpt.max(k1);
        self.expect_kw("end")?;
        Ok(Stmt::If { decider, cond, notify, then_branch, else_branch, site, span })
    }

    fn checkpoint_stmt(&mut self, start: usize) -> PResult<Stmt> {
        let span = self.span_from(start);
        self.expect_kw("do")?;
        let site = CheckpointSiteId(self.next_ckpt);
        self.next_ckpt += 1;
        let body = self.stmts()?;
        if !self.at_kw("rescue") {
            return self.error("`checkpoint` requires a `rescue` block", Some("`rescue`"));
        }
        self.bump();
        let rescue = self.stmts()?;
        self.expect_kw("end")?;
        if rescue.is_empty() && !body.is_empty() {
            return self.error_at(span, "a non-empty `checkpoint` body needs a non-empty `rescue`");
        }
        Ok(Stmt::Checkpoint { body, rescue, site, span })
    }

    fn with_stmt(&mut self, start: usize) -> PResult<Stmt> {
        let role = self.role()?;
        self.expect(&Tok::Dot, "`.`")?;
        let pattern = self.located_pattern()?;
        self.expect(&Tok::LArrow, "`<-`")?;
        let rhs_start = self.pos;
        let rhs = if let Tok::Upper(_) = self.peek() {
            let rspan = self.here();
            let r = self.role()?;
            if r != role {
                return self.error_at(rspan, format!("`with` binds at {role} but the expression is located at {r}"));
            }
            self.expect(&Tok::Dot, "`.`")?;
            WithRhs::Local(self.located_expr()?)
        } else if let Some(call) = self.chor_call(rhs_start)? {
            WithRhs::Call(call)
        } else {
            WithRhs::Local(self.expr()?)
        };
        let span = self.span_from(start);
        self.expect_kw("do")?;
        let rest = self.stmts()?;
        self.expect_kw("end")?;
        Ok(Stmt::With { role, pattern, rhs, rest, span })
    }

    // ---- expressions ----

    /// Expression after `Role.`: a parenthesized expression or a primary,
    /// optionally continued by binary operators.
    fn located_expr(&mut self) -> PResult<Expr> {
        let lhs = self.primary()?;
        self.binary_rest(lhs, 0)
    }

    fn expr(&mut self) -> PResult<Expr> {
        let lhs = self.unary()?;
        self.binary_rest(lhs, 0)
    }

    fn binop(&self) -> Option<(BinOp, u8)> {
        Some(match self.peek() {
            Tok::Ident(s) if s == "or" => (BinOp::Or, 1),
            Tok::Ident(s) if s == "and" => (BinOp::And, 2),
            Tok::EqEq => (BinOp::Eq, 3),
            Tok::Ne => (BinOp::Ne, 3),
            Tok::Lt => (BinOp::Lt, 3),
            Tok::Le => (BinOp::Le, 3),
            Tok::Gt => (BinOp::Gt, 3),
            Tok::Ge => (BinOp::Ge, 3),
            Tok::Concat => (BinOp::Concat, 4),
            Tok::Plus => (BinOp::Add, 5),
            Tok::Minus => (BinOp::Sub, 5),
            Tok::Star => (BinOp::Mul, 6),
            Tok::Slash => (BinOp::Div, 6),
            Tok::Ident(s) if s == "rem" => (BinOp::Rem, 6),
            _ => return None,
        })
    }

    fn binary_rest(&mut self, mut lhs: Expr, min_prec: u8) -> PResult<Expr> {
        while let Some((op, prec)) = self.binop() {
            if prec < min_prec {
                break;
            }
            self.bump();
            let mut rhs = self.unary()?;
            while let Some((_, next)) = self.binop() {
                // `<>` is right-associative, everything else left.
                let climb = next > prec || (next == prec && op == BinOp::Concat);
                if !climb {
                    break;
                }
                rhs = self.binary_rest(rhs, if next > prec { prec + 1 } else { prec })?;
            }
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat(&Tok::Minus) {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Lit(Value::Int(i)) => Expr::Lit(Value::Int(-i)),
                e => Expr::Unary(UnOp::Neg, Box::new(e)),
            });
        }
        if self.eat_kw("not") {
            return Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn expr_list(&mut self, close: &Tok, what: &str) -> PResult<Vec<Expr>> {
        let mut items = Vec::new();
        if !self.at(close) {
            loop {
                items.push(self.expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(close, what)?;
        Ok(items)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let t = self.toks[self.pos].clone();
        match t.tok {
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Lit(Value::Int(i)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Lit(Value::Str(s)))
            }
            Tok::Atom(a) => {
                self.bump();
                Ok(Expr::Lit(Value::Atom(a)))
            }
            Tok::Minus => self.unary(),
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::LBrace => {
                self.bump();
                Ok(Expr::Tuple(self.expr_list(&Tok::RBrace, "`}`")?))
            }
            Tok::LBracket => {
                self.bump();
                Ok(Expr::List(self.expr_list(&Tok::RBracket, "`]`")?))
            }
            Tok::At => {
                let (n, a) = self.func_ref()?;
                Ok(Expr::FuncRef(n, a))
            }
            Tok::Ident(ref s) if s == "nil" => {
                self.bump();
                Ok(Expr::nil())
            }
            Tok::Ident(ref s) if s == "true" || s == "false" => {
                self.bump();
                Ok(Expr::Lit(Value::Bool(s == "true")))
            }
            Tok::Ident(ref s) if s == "not" => self.unary(),
            Tok::Ident(ref s) if s == "rem" && self.peek_at(1) == &Tok::LParen => {
                self.bump();
                self.bump();
                let args = self.expr_list(&Tok::RParen, "`)`")?;
                Ok(Expr::Call("rem".into(), args, self.span_of(&t)))
            }
            Tok::Ident(ref s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                if self.at(&Tok::LParen) {
                    self.bump();
                    let args = self.expr_list(&Tok::RParen, "`)`")?;
                    Ok(Expr::Call(s.clone(), args, self.span_of(&t)))
                } else {
                    Ok(Expr::Var(s.clone(), self.span_of(&t)))
                }
            }
            other => self.error(format!("unexpected {other}"), Some("an expression")),
        }
    }

    // ---- patterns ----

    fn located_pattern(&mut self) -> PResult<Pattern> {
        self.pattern()
    }

    fn pattern(&mut self) -> PResult<Pattern> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Pattern::Lit(Value::Int(i)))
            }
            Tok::Minus => {
                self.bump();
                match self.peek().clone() {
                    Tok::Int(i) => {
                        self.bump();
                        Ok(Pattern::Lit(Value::Int(-i)))
                    }
                    other => self.error(format!("unexpected {other}"), Some("an integer")),
                }
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Pattern::Lit(Value::Str(s)))
            }
            Tok::Atom(a) => {
                self.bump();
                Ok(Pattern::Lit(Value::Atom(a)))
            }
            Tok::Caret => {
                self.bump();
                let (name, _) = self.ident("a variable to pin")?;
                Ok(Pattern::Pin(name))
            }
            Tok::LParen => {
                self.bump();
                let p = self.pattern()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(p)
            }
            Tok::LBrace => {
                self.bump();
                Ok(Pattern::Tuple(self.pattern_list(&Tok::RBrace, "`}`")?))
            }
            Tok::LBracket => {
                self.bump();
                Ok(Pattern::List(self.pattern_list(&Tok::RBracket, "`]`")?))
            }
            Tok::Ident(s) if s == "nil" => {
                self.bump();
                Ok(Pattern::Lit(Value::Nil))
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.bump();
                Ok(Pattern::Lit(Value::Bool(s == "true")))
            }
            Tok::Ident(s) if s.starts_with('_') => {
                self.bump();
                Ok(Pattern::Wildcard)
            }
            Tok::Ident(_) => {
                let (name, _) = self.ident("a pattern")?;
                Ok(Pattern::Var(name))
            }
            other => self.error(format!("unexpected {other}"), Some("a pattern")),
        }
    }

    fn pattern_list(&mut self, close: &Tok, what: &str) -> PResult<Vec<Pattern>> {
        let mut items = Vec::new();
        if !self.at(close) {
            loop {
                items.push(self.pattern()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(close, what)?;
        Ok(items)
    }

    // ---- impl files ----

    fn impl_module(&mut self) -> PResult<ImplModule> {
        self.expect_kw("defimpl")?;
        let role = self.role()?;
        self.expect_kw("do")?;
        let mut functions = Vec::new();
        while self.at_kw("def") {
            functions.push(self.impl_function()?);
        }
        self.expect_kw("end")?;
        Ok(ImplModule { role, functions })
    }

    fn impl_function(&mut self) -> PResult<ImplFunction> {
        let start = self.pos;
        self.expect_kw("def")?;
        let (name, _) = self.ident("a function name")?;
        self.expect(&Tok::LParen, "`(`")?;
        let params = self.pattern_list(&Tok::RParen, "`)`")?;
        let span = self.span_from(start);
        self.expect_kw("do")?;
        let mut binds = Vec::new();
        let mut result = None;
        loop {
            while self.eat(&Tok::Semi) {}
            if self.at_kw("end") {
                break;
            }
            if let Some(prev) = result.take() {
                // A bare expression that is not last is evaluated for effect.
                binds.push((Pattern::Wildcard, prev));
            }
            let espan = self.here();
            let e = self.expr()?;
            if self.eat(&Tok::Assign) {
                let Some(p) = expr_to_pattern(&e) else {
                    return self.error_at(espan, "left side of `=` is not a pattern");
                };
                binds.push((p, self.expr()?));
            } else {
                result = Some(e);
            }
        }
        self.expect_kw("end")?;
        Ok(ImplFunction { name, params, binds, result: result.unwrap_or_else(Expr::nil), span })
    }
}

fn expr_to_pattern(e: &Expr) -> Option<Pattern> {
    Some(match e {
        Expr::Lit(v) => Pattern::Lit(v.clone()),
        Expr::Var(v, _) if v.starts_with('_') => Pattern::Wildcard,
        Expr::Var(v, _) => Pattern::Var(v.clone()),
        Expr::Tuple(items) => Pattern::Tuple(items.iter().map(expr_to_pattern).collect::<Option<_>>()?),
        Expr::List(items) => Pattern::List(items.iter().map(expr_to_pattern).collect::<Option<_>>()?),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_body(src: &str) -> Vec<Stmt> {
        parse(src).unwrap().run().body.clone()
    }

    #[test]
    fn tuple_delivery() {
        let body = run_body(
            "defchor [Alice, Bob] do\n def run() do\n Alice.{:answer, 42} ~> Bob.{:answer, the_answer}\n end\nend",
        );
        let Stmt::Delivery { sender, expr, receiver, pattern, site, .. } = &body[0] else {
            panic!("expected delivery, got {body:?}")
        };
        assert_eq!(sender.as_str(), "Alice");
        assert_eq!(receiver.as_str(), "Bob");
        assert_eq!(expr, &Expr::Tuple(vec![Expr::Lit(Value::atom("answer")), Expr::Lit(Value::Int(42))]));
        assert_eq!(
            pattern,
            &Pattern::Tuple(vec![Pattern::Lit(Value::atom("answer")), Pattern::Var("the_answer".into())])
        );
        assert_eq!(*site, SiteId(0));
    }

    #[test]
    fn empty_defchor_is_missing_run() {
        let err = parse("defchor [A] do end").unwrap_err();
        assert!(err.message.contains("no `run`"), "{err}");
    }

    #[test]
    fn minimal_checkpoint_listing() {
        let src = "defchor [Alice, Bob] do
  def run() do
    checkpoint do
      Alice.f(1 / 0) ~> Bob.y
    rescue
      Alice.f(1) ~> Bob.y
    end
    Alice.(2 + 2) ~> Bob.sum
    Bob.(sum + sum) ~> Alice.result
    Alice.result
  end
end";
        let body = run_body(src);
        assert_eq!(body.len(), 4);
        let Stmt::Checkpoint { body: b, rescue: r, site, span } = &body[0] else { panic!() };
        assert_eq!((b.len(), r.len()), (1, 1));
        assert_eq!(*site, CheckpointSiteId(0));
        assert_eq!(span.line, 3);
        assert!(matches!(body[3], Stmt::Local { .. }));
    }

    #[test]
    fn if_requires_else() {
        let err = parse("defchor [A, B] do def run() do if A.x do A.(1) end end end").unwrap_err();
        assert!(err.message.contains("else"), "{err}");
    }

    #[test]
    fn branch_sites_are_numbered_from_the_same_point() {
        let body = run_body(
            "defchor [A, B] do def run() do
               if A.(true) do A.(1) ~> B.x else A.(2) ~> B.y end
               A.(3) ~> B.z
             end end",
        );
        let Stmt::If { then_branch, else_branch, site, .. } = &body[0] else { panic!() };
        assert_eq!(*site, SiteId(0));
        let site_of = |s: &Stmt| match s {
            Stmt::Delivery { site, .. } => *site,
            _ => panic!(),
        };
        assert_eq!(site_of(&then_branch[0]), SiteId(1));
        assert_eq!(site_of(&else_branch[0]), SiteId(1));
        assert_eq!(site_of(&body[1]), SiteId(2));
    }

    #[test]
    fn notify_cannot_name_decider() {
        let err = parse("defchor [A, B] do def run() do if A.(true), notify: [A] do A.(1) else A.(2) end end end")
            .unwrap_err();
        assert!(err.message.contains("deciding role"), "{err}");
    }

    #[test]
    fn unknown_role_and_self_delivery_rejected() {
        assert!(parse("defchor [A, B] do def run() do A.(1) ~> C.x end end").is_err());
        assert!(parse("defchor [A, B] do def run() do A.(1) ~> A.x end end").is_err());
    }

    #[test]
    fn with_forms_resolve_calls() {
        let body = run_body(
            "defchor [A, B] do
               def run(A.x) do
                 with A.y <- compute_value() do A.y end
                 with A.z <- helper(A.x) do A.z end
               end
               def helper(A.v) do A.(v + 1) end
             end",
        );
        let Stmt::With { rhs: WithRhs::Local(Expr::Call(n, ..)), .. } = &body[0] else { panic!() };
        assert_eq!(n, "compute_value");
        let Stmt::With { rhs: WithRhs::Call(c), .. } = &body[1] else { panic!() };
        assert_eq!(c.target, CallTarget::Direct("helper".into()));
    }

    #[test]
    fn located_binop_continuation() {
        let body = run_body("defchor [V, P] do def run(V.rounds) do V.rounds - 1 ~> P.r end end");
        let Stmt::Delivery { expr, .. } = &body[0] else { panic!() };
        assert!(matches!(expr, Expr::Binary(BinOp::Sub, ..)));
    }

    #[test]
    fn precedence_and_concat_associativity() {
        let vals = parse_values("1 + 2 * 3").unwrap_err();
        assert!(vals.message.contains("constant"));
        let prog =
            parse("defchor [A] do def run() do A.(1 + 2 * 3 < 10 and \"a\" <> \"b\" <> \"c\" == \"abc\") end end")
                .unwrap();
        let Stmt::Local { expr, .. } = &prog.run().body[0] else { panic!() };
        let Expr::Binary(BinOp::And, l, r) = expr else { panic!("{expr:?}") };
        assert!(matches!(**l, Expr::Binary(BinOp::Lt, ..)));
        let Expr::Binary(BinOp::Eq, cat, _) = &**r else { panic!() };
        let Expr::Binary(BinOp::Concat, _, tail) = &**cat else { panic!() };
        assert!(matches!(**tail, Expr::Binary(BinOp::Concat, ..)));
    }

    #[test]
    fn impl_modules() {
        let mods = parse_impls(
            "x.chim",
            "defimpl Alice do
               def get_budget() do 60 end
               def f(x) do
                 y = x * 2
                 y - x
               end
             end
             defimpl Bob do def g({a, _}) do a end end",
        )
        .unwrap();
        assert_eq!(mods.len(), 2);
        assert_eq!(mods[0].functions[1].binds.len(), 1);
        assert_eq!(mods[1].functions[0].params.len(), 1);
    }

    #[test]
    fn value_lists() {
        assert_eq!(
            parse_values("true, -3, {:a, [1, \"x\"]}").unwrap(),
            vec![
                Value::Bool(true),
                Value::Int(-3),
                Value::Tuple(vec![Value::atom("a"), Value::List(vec![Value::Int(1), Value::str("x")])])
            ]
        );
        assert!(parse_values("").unwrap().is_empty());
    }
}
