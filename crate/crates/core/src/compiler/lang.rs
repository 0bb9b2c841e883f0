//! Source language: lexer, parser and syntax tree.
//!
//! ```text
//! program := stmt*
//! stmt    := "input" ident ("," ident)* ";"
//!          | "output" ident (":" domain)? ("," ident (":" domain)?)* ";"
//!          | ident "=" expr ";"
//!          | "if" "(" expr rel expr ")" body ("else" body)?
//!          | "repeat" integer body
//! body    := "{" stmt* "}" | stmt
//! expr    := term (("+" | "-") term)*
//! term    := unary ("*" unary)*
//! unary   := "-" unary | number | ident | "(" expr ")"
//! rel     := ">" | ">=" | "<" | "<=" | "==" | "!="
//! ```
//!
//! `//` starts a comment that runs to the end of the line.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{Fixed, FixedError};
use crate::hase::Domain;

/// Unrolled iterations allowed for a single `repeat`.
pub const MAX_REPEAT: u32 = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.col)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub span: Span,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
}

impl Relation {
    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            Relation::Gt => ord == Ordering::Greater,
            Relation::Ge => ord != Ordering::Less,
            Relation::Lt => ord == Ordering::Less,
            Relation::Le => ord != Ordering::Greater,
            Relation::Eq => ord == Ordering::Equal,
            Relation::Ne => ord != Ordering::Equal,
        }
    }

    /// Relation with the operands exchanged.
    pub fn flipped(self) -> Relation {
        match self {
            Relation::Gt => Relation::Lt,
            Relation::Ge => Relation::Le,
            Relation::Lt => Relation::Gt,
            Relation::Le => Relation::Ge,
            r => r,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Gt => ">",
            Relation::Ge => ">=",
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Eq => "==",
            Relation::Ne => "!=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(Fixed, Span),
    Var(String, Span),
    Neg(Box<Expr>, Span),
    Bin(BinOp, Box<Expr>, Box<Expr>, Span),
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Num(_, s) | Expr::Var(_, s) | Expr::Neg(_, s) | Expr::Bin(_, _, _, s) => *s,
        }
    }

    /// Literal value, folding leading minus signs.
    pub fn literal(&self) -> Option<Fixed> {
        match self {
            Expr::Num(v, _) => Some(*v),
            Expr::Neg(e, _) => e.literal().map(|v| Fixed::new(-v.mantissa, v.scale)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cond {
    pub lhs: Expr,
    pub rel: Relation,
    pub rhs: Expr,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputItem {
    pub name: String,
    pub domain: Option<Domain>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    Input { names: Vec<(String, Span)>, span: Span },
    Output { items: Vec<OutputItem>, span: Span },
    Assign { target: String, expr: Expr, span: Span },
    If { cond: Cond, then_body: Vec<Stmt>, else_body: Option<Vec<Stmt>>, span: Span },
    Repeat { count: u32, body: Vec<Stmt>, span: Span },
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SourceProgram {
    pub stmts: Vec<Stmt>,
}

impl SourceProgram {
    /// Declared inputs in declaration order.
    pub fn inputs(&self) -> Vec<String> {
        self.stmts
            .iter()
            .filter_map(|s| match s {
                Stmt::Input { names, .. } => Some(names.iter().map(|(n, _)| n.clone())),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Declared outputs in declaration order.
    pub fn outputs(&self) -> Vec<OutputItem> {
        self.stmts
            .iter()
            .filter_map(|s| match s {
                Stmt::Output { items, .. } => Some(items.iter().cloned()),
                _ => None,
            })
            .flatten()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Sym(&'static str),
    Eof,
}

const SYMBOLS: [&str; 16] = [">=", "<=", "==", "!=", "(", ")", "{", "}", ";", ",", "=", "+", "-", "*", ":", ">"];
const LT: &str = "<";

fn lex(text: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += (i - start) as u32;
            out.push((Tok::Ident(chars[start..i].iter().collect()), span));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            col += (i - start) as u32;
            out.push((Tok::Num(chars[start..i].iter().collect()), span));
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let sym = SYMBOLS
            .iter()
            .chain(std::iter::once(&LT))
            .find(|s| rest.starts_with(**s))
            .copied();
        match sym {
            Some(s) => {
                i += s.len();
                col += s.len() as u32;
                out.push((Tok::Sym(s), span));
            }
            None => {
                return Err(ParseError { span, message: format!("unexpected character `{c}`") });
            }
        }
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { span: self.span(), message: message.into() })
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(s) => format!("number `{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }

    fn expect(&mut self, sym: &'static str) -> Result<Span, ParseError> {
        if *self.peek() == Tok::Sym(sym) {
            Ok(self.bump().1)
        } else {
            self.err(format!("expected `{sym}`, found {}", Self::describe(self.peek())))
        }
    }

    fn eat(&mut self, sym: &'static str) -> bool {
        if *self.peek() == Tok::Sym(sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<(String, Span), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                let span = self.bump().1;
                Ok((s, span))
            }
            t => self.err(format!("expected identifier, found {}", Self::describe(&t))),
        }
    }

    fn program(&mut self) -> Result<SourceProgram, ParseError> {
        let mut stmts = Vec::new();
        while *self.peek() != Tok::Eof {
            stmts.push(self.stmt(true)?);
        }
        Ok(SourceProgram { stmts })
    }

    fn stmt(&mut self, top: bool) -> Result<Stmt, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Ident(k) if k == "input" || k == "output" => {
                if !top {
                    return self.err(format!("`{k}` declarations must appear at the top level"));
                }
                self.bump();
                if k == "input" {
                    let mut names = vec![self.ident()?];
                    while self.eat(",") {
                        names.push(self.ident()?);
                    }
                    self.expect(";")?;
                    Ok(Stmt::Input { names, span })
                } else {
                    let mut items = vec![self.output_item()?];
                    while self.eat(",") {
                        items.push(self.output_item()?);
                    }
                    self.expect(";")?;
                    Ok(Stmt::Output { items, span })
                }
            }
            Tok::Ident(k) if k == "if" => {
                self.bump();
                self.expect("(")?;
                let cond = self.cond()?;
                self.expect(")")?;
                let then_body = self.body()?;
                let else_body = if *self.peek() == Tok::Ident("else".into()) {
                    self.bump();
                    Some(self.body()?)
                } else {
                    None
                };
                Ok(Stmt::If { cond, then_body, else_body, span })
            }
            Tok::Ident(k) if k == "repeat" => {
                self.bump();
                let count = match self.bump() {
                    (Tok::Num(n), s) => n.parse::<u32>().map_err(|_| ParseError {
                        span: s,
                        message: format!("repeat count `{n}` must be a non-negative integer"),
                    })?,
                    (t, s) => {
                        return Err(ParseError {
                            span: s,
                            message: format!("expected repeat count, found {}", Self::describe(&t)),
                        })
                    }
                };
                if count > MAX_REPEAT {
                    return Err(ParseError { span, message: format!("repeat count {count} exceeds {MAX_REPEAT}") });
                }
                let body = self.body()?;
                Ok(Stmt::Repeat { count, body, span })
            }
            Tok::Ident(k) if k == "while" || k == "for" || k == "loop" => {
                self.err(format!("unbounded loop `{k}` is not supported; use `repeat N`"))
            }
            Tok::Ident(k) if k == "else" => self.err("`else` without a matching `if`"),
            Tok::Ident(_) => {
                let (target, _) = self.ident()?;
                self.expect("=")?;
                let expr = self.expr()?;
                self.expect(";")?;
                Ok(Stmt::Assign { target, expr, span })
            }
            t => self.err(format!("expected a statement, found {}", Self::describe(&t))),
        }
    }

    fn output_item(&mut self) -> Result<OutputItem, ParseError> {
        let (name, span) = self.ident()?;
        let domain = if self.eat(":") {
            match self.bump() {
                (Tok::Ident(d), _) if d == "add" => Some(Domain::Add),
                (Tok::Ident(d), _) if d == "mul" => Some(Domain::Mul),
                (t, s) => {
                    return Err(ParseError {
                        span: s,
                        message: format!("expected `add` or `mul`, found {}", Self::describe(&t)),
                    })
                }
            }
        } else {
            None
        };
        Ok(OutputItem { name, domain, span })
    }

    fn body(&mut self) -> Result<Vec<Stmt>, ParseError> {
        if self.eat("{") {
            let mut stmts = Vec::new();
            while !self.eat("}") {
                if *self.peek() == Tok::Eof {
                    return self.err("unclosed `{`");
                }
                stmts.push(self.stmt(false)?);
            }
            Ok(stmts)
        } else {
            Ok(vec![self.stmt(false)?])
        }
    }

    fn cond(&mut self) -> Result<Cond, ParseError> {
        let span = self.span();
        let lhs = self.expr()?;
        let rel = match self.peek() {
            Tok::Sym(">") => Relation::Gt,
            Tok::Sym(">=") => Relation::Ge,
            Tok::Sym("<") => Relation::Lt,
            Tok::Sym("<=") => Relation::Le,
            Tok::Sym("==") => Relation::Eq,
            Tok::Sym("!=") => Relation::Ne,
            t => return self.err(format!("expected a comparison operator, found {}", Self::describe(t))),
        };
        self.bump();
        let rhs = self.expr()?;
        Ok(Cond { lhs, rel, rhs, span })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let span = self.span();
            let op = if self.eat("+") {
                BinOp::Add
            } else if self.eat("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs), span);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let span = self.span();
            if !self.eat("*") {
                return Ok(lhs);
            }
            let rhs = self.unary()?;
            lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs), span);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        if self.eat("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?), span));
        }
        if self.eat("(") {
            let e = self.expr()?;
            self.expect(")")?;
            return Ok(e);
        }
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                let v = Fixed::parse(&n).map_err(|e| ParseError {
                    span,
                    message: match e {
                        FixedError::TooPrecise(_) => format!("literal `{n}` has more than six fractional digits"),
                        _ => format!("malformed number `{n}`"),
                    },
                })?;
                Ok(Expr::Num(v, span))
            }
            Tok::Ident(_) => {
                let (name, span) = self.ident()?;
                Ok(Expr::Var(name, span))
            }
            t => self.err(format!("expected an expression, found {}", Self::describe(&t))),
        }
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "input" | "output" | "if" | "else" | "repeat" | "while" | "for" | "loop")
}

/// Parses program text.
pub fn parse(text: &str) -> Result<SourceProgram, ParseError> {
    let toks = lex(text)?;
    Parser { toks, pos: 0 }.program()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTING: &str = "input b, c, e;
a = b + c;
d = a * e;
if (d > 42)
    f = 1;
else
    f = 0;
";

    #[test]
    fn listing_shape() {
        let p = parse(LISTING).unwrap();
        assert_eq!(p.stmts.len(), 4);
        let Stmt::If { cond, then_body, else_body, .. } = &p.stmts[3] else { panic!("expected if") };
        assert_eq!(cond.rel, Relation::Gt);
        assert_eq!(cond.rhs.literal(), Some(Fixed::from_int(42)));
        assert_eq!(then_body.len(), 1);
        assert_eq!(else_body.as_ref().map(Vec::len), Some(1));
        assert_eq!(p.inputs(), vec!["b", "c", "e"]);
    }

    #[test]
    fn single_assignment() {
        let p = parse("a = b + c;").unwrap();
        assert_eq!(p.stmts.len(), 1);
        let Stmt::Assign { target, expr, .. } = &p.stmts[0] else { panic!() };
        assert_eq!(target, "a");
        assert!(matches!(expr, Expr::Bin(BinOp::Add, _, _, _)));
    }

    #[test]
    fn precedence_and_parentheses() {
        let p = parse("x = a + b * c; y = (a + b) * c;").unwrap();
        let Stmt::Assign { expr, .. } = &p.stmts[0] else { panic!() };
        assert!(matches!(expr, Expr::Bin(BinOp::Add, _, r, _) if matches!(**r, Expr::Bin(BinOp::Mul, ..))));
        let Stmt::Assign { expr, .. } = &p.stmts[1] else { panic!() };
        assert!(matches!(expr, Expr::Bin(BinOp::Mul, l, _, _) if matches!(**l, Expr::Bin(BinOp::Add, ..))));
    }

    #[test]
    fn missing_semicolon_reports_position() {
        let err = parse("a = b + c\nd = a;").unwrap_err();
        assert_eq!(err.span, Span { line: 2, col: 1 });
        assert!(err.message.contains("expected `;`"), "{}", err.message);
    }

    #[test]
    fn unbounded_loops_are_refused() {
        let err = parse("input x;\nwhile (x > 0) { x = x - 1; }").unwrap_err();
        assert_eq!(err.span.line, 2);
        assert!(err.message.contains("unbounded"));
    }

    #[test]
    fn comments_blocks_and_annotations() {
        let text = "// cart\ninput p;\nrepeat 3 { p = p + p; } // doubling\noutput p: mul, q;";
        let p = parse(text).unwrap();
        assert!(matches!(p.stmts[1], Stmt::Repeat { count: 3, .. }));
        let outs = p.outputs();
        assert_eq!(outs[0].domain, Some(Domain::Mul));
        assert_eq!(outs[1].domain, None);
    }

    #[test]
    fn nested_declarations_are_refused() {
        assert!(parse("if (a > 1) { input b; }").is_err());
        assert!(parse("x = 1.0000001;").is_err());
        assert!(parse("x = 3 $ 4;").is_err());
        assert!(parse("else x = 1;").is_err());
        assert!(parse("if (a > 1) { x = 1;").is_err());
    }

    #[test]
    fn relations() {
        use std::cmp::Ordering::*;
        assert!(Relation::Ge.holds(Equal) && !Relation::Gt.holds(Equal));
        assert_eq!(Relation::Lt.flipped(), Relation::Gt);
        for (src, rel) in [("<", Relation::Lt), ("<=", Relation::Le), ("==", Relation::Eq), ("!=", Relation::Ne)] {
            let p = parse(&format!("if (a {src} b) x = 1;")).unwrap();
            let Stmt::If { cond, .. } = &p.stmts[0] else { panic!() };
            assert_eq!(cond.rel, rel);
        }
    }
}
