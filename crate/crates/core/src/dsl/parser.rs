//! Recursive-descent parser for conditions.
//!
//! Precedence, tightest first: `not`, comparisons / temporal / `has`
//! (left-associative), `and`, `or`.

use thiserror::Error;

use super::ast::{AggOp, CmpOp, Expr, Path, TemporalOp, KEYWORDS};
use super::typeck;
use crate::value::Value;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("syntax error at {line}:{column}: expected {}, found {found}", expected.join(" or "))]
    Syntax { line: usize, column: usize, expected: Vec<String>, found: String },
    #[error("type error at {line}:{column}: {message}")]
    Type { line: usize, column: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    Dec(f64),
    Sym(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string {}", crate::value::quote(s)),
            Tok::Int(i) => format!("number {i}"),
            Tok::Dec(d) => format!("number {d}"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

const SYMBOLS: &[&str] = &[">=", "<=", "==", "!=", ">", "<", "(", ")", "[", "]", ",", "."];

fn lex(src: &str) -> Result<Vec<Spanned>, DslError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let syntax = |line, column, expected: &str, found: String| DslError::Syntax {
        line,
        column,
        expected: vec![expected.to_string()],
        found,
    };
    while i < chars.len() {
        let c = chars[i];
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
        let (start_line, start_col) = (line, col);
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            i += 1;
            let mut decimal = false;
            while i < chars.len() {
                let d = chars[i];
                if d.is_ascii_digit() {
                    i += 1;
                } else if d == '.' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()) {
                    decimal = true;
                    i += 1;
                } else if (d == 'e' || d == 'E')
                    && (chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
                        || (chars.get(i + 1) == Some(&'-') && chars.get(i + 2).is_some_and(|n| n.is_ascii_digit())))
                {
                    decimal = true;
                    i += 2;
                } else {
                    break;
                }
            }
            let text: String = chars[start..i].iter().collect();
            if decimal {
                Tok::Dec(text.parse().map_err(|_| syntax(start_line, start_col, "number", text.clone()))?)
            } else {
                Tok::Int(text.parse().map_err(|_| syntax(start_line, start_col, "integer in range", text.clone()))?)
            }
        } else if c == '"' {
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(syntax(start_line, start_col, "closing `\"`", "end of input".into())),
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            other => {
                                return Err(syntax(
                                    line,
                                    col + (i - start),
                                    "escape `\\\"`, `\\\\` or `\\n`",
                                    format!("{other:?}"),
                                ))
                            }
                        }
                        i += 2;
                    }
                    Some(&ch) => {
                        if ch == '\n' {
                            line += 1;
                        }
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            Tok::Str(s)
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            match SYMBOLS.iter().find(|s| rest.starts_with(*s)) {
                Some(sym) => {
                    i += sym.len();
                    Tok::Sym(sym)
                }
                None => return Err(syntax(start_line, start_col, "token", format!("`{c}`"))),
            }
        };
        col += i - start;
        out.push(Spanned { tok, line: start_line, column: start_col });
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> DslError {
        let t = self.peek();
        DslError::Syntax {
            line: t.line,
            column: t.column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.describe(),
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn is_sym(&self, sym: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(s) if *s == sym)
    }

    fn expect_sym(&mut self, sym: &'static str) -> Result<(), DslError> {
        if self.is_sym(sym) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[&format!("`{sym}`")]))
        }
    }

    fn typed(expr: Expr, at: &Spanned) -> Result<Expr, DslError> {
        typeck::node_type(&expr, typeck::type_of)
            .map_err(|message| DslError::Type { line: at.line, column: at.column, message })?;
        Ok(expr)
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.and()?;
        while self.is_kw("or") {
            let at = self.bump();
            let rhs = self.and()?;
            lhs = Self::typed(Expr::or(lhs, rhs), &at)?;
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.comparison()?;
        while self.is_kw("and") {
            let at = self.bump();
            let rhs = self.comparison()?;
            lhs = Self::typed(Expr::and(lhs, rhs), &at)?;
        }
        Ok(lhs)
    }

    fn comparison(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match &self.peek().tok {
                Tok::Sym(">") => Some(CmpOp::Gt),
                Tok::Sym("<") => Some(CmpOp::Lt),
                Tok::Sym(">=") => Some(CmpOp::Ge),
                Tok::Sym("<=") => Some(CmpOp::Le),
                Tok::Sym("==") => Some(CmpOp::Eq),
                Tok::Sym("!=") => Some(CmpOp::Ne),
                Tok::Ident(s) if s == "is" => Some(CmpOp::Is),
                Tok::Ident(s) if s == "in" => Some(CmpOp::In),
                _ => None,
            };
            if let Some(op) = op {
                let at = self.bump();
                let rhs = self.unary()?;
                lhs = Self::typed(Expr::cmp(op, lhs, rhs), &at)?;
                continue;
            }
            let temporal = match &self.peek().tok {
                Tok::Ident(s) if s == "BEFORE" => Some(TemporalOp::Before),
                Tok::Ident(s) if s == "AFTER" => Some(TemporalOp::After),
                Tok::Ident(s) if s == "DURING" => Some(TemporalOp::During),
                _ => None,
            };
            if let Some(op) = temporal {
                let at = self.bump();
                let rhs = if op == TemporalOp::During && self.is_sym("[") { self.interval()? } else { self.unary()? };
                lhs = Self::typed(Expr::temporal(op, lhs, rhs), &at)?;
                continue;
            }
            if self.is_kw("has") {
                let at = self.bump();
                let Expr::Path(subject) = lhs else {
                    return Err(DslError::Type {
                        line: at.line,
                        column: at.column,
                        message: "`has` expects a role or holon name on the left".into(),
                    });
                };
                let cap = self.ident()?;
                lhs = Expr::Has(subject, cap);
                continue;
            }
            return Ok(lhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if self.is_kw("not") {
            let at = self.bump();
            let inner = self.unary()?;
            return Self::typed(Expr::not(inner), &at);
        }
        self.primary()
    }

    fn ident(&mut self) -> Result<String, DslError> {
        match &self.peek().tok {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn path(&mut self) -> Result<Path, DslError> {
        let mut segs = vec![self.ident()?];
        while self.is_sym(".") {
            self.bump();
            segs.push(self.ident()?);
        }
        Ok(Path(segs))
    }

    fn number(&mut self) -> Result<f64, DslError> {
        match self.peek().tok {
            Tok::Int(i) => {
                self.bump();
                Ok(i as f64)
            }
            Tok::Dec(d) => {
                self.bump();
                Ok(d)
            }
            _ => Err(self.error(&["number"])),
        }
    }

    fn literal(&mut self) -> Result<Option<Value>, DslError> {
        let v = match &self.peek().tok {
            Tok::Str(s) => Value::Str(s.clone()),
            Tok::Int(i) => Value::Int(*i),
            Tok::Dec(d) => Value::Decimal(*d),
            Tok::Ident(s) if s == "true" => Value::Bool(true),
            Tok::Ident(s) if s == "false" => Value::Bool(false),
            Tok::Ident(s) if s == "null" => Value::Null,
            Tok::Ident(s) if s == "loc" && *self.peek_at(1) == Tok::Sym("(") => {
                self.bump();
                self.bump();
                let lat = self.number()?;
                self.expect_sym(",")?;
                let lon = self.number()?;
                self.expect_sym(")")?;
                return Ok(Some(Value::loc(lat, lon)));
            }
            _ => return Ok(None),
        };
        self.bump();
        Ok(Some(v))
    }

    fn interval(&mut self) -> Result<Expr, DslError> {
        let at = self.peek().clone();
        self.expect_sym("[")?;
        let bound = |p: &mut Parser| match p.peek().tok {
            Tok::Int(i) if i >= 0 => {
                p.bump();
                Ok(i as u64)
            }
            _ => Err(p.error(&["non-negative tick"])),
        };
        let a = bound(self)?;
        self.expect_sym(",")?;
        let b = bound(self)?;
        self.expect_sym("]")?;
        Self::typed(Expr::Interval(a, b), &at)
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        if self.is_sym("(") {
            self.bump();
            let e = self.expr()?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        if self.is_sym("[") {
            self.bump();
            let mut items = Vec::new();
            if !self.is_sym("]") {
                loop {
                    match self.literal()? {
                        Some(v) => items.push(v),
                        None => return Err(self.error(&["literal"])),
                    }
                    if self.is_sym(",") {
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
            self.expect_sym("]")?;
            return Ok(Expr::List(items));
        }
        if let Some(v) = self.literal()? {
            return Ok(Expr::Literal(v));
        }
        let agg = match &self.peek().tok {
            Tok::Ident(s) if s == "COUNT" => Some(AggOp::Count),
            Tok::Ident(s) if s == "AVERAGE" => Some(AggOp::Average),
            Tok::Ident(s) if s == "SUM" => Some(AggOp::Sum),
            _ => None,
        };
        if let Some(op) = agg {
            self.bump();
            self.expect_sym("(")?;
            let path = self.path()?;
            self.expect_sym(")")?;
            let field = if path.0.len() > 1 { Some(path.tail()) } else { None };
            return Ok(Expr::Agg { op, selector: path.head().to_string(), field });
        }
        if matches!(&self.peek().tok, Tok::Ident(s) if s == "sensation") && *self.peek_at(1) == Tok::Sym("(") {
            self.bump();
            self.bump();
            let kind = match &self.peek().tok {
                Tok::Str(s) => s.clone(),
                _ => return Err(self.error(&["sensation kind string"])),
            };
            self.bump();
            self.expect_sym(")")?;
            return Ok(Expr::Event(kind));
        }
        match &self.peek().tok {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => Ok(Expr::Path(self.path()?)),
            _ => Err(self.error(&["operand"])),
        }
    }
}

fn parse_with(source: &str, check: fn(&Expr) -> Result<(), String>) -> Result<Expr, DslError> {
    let toks = lex(source)?;
    let mut p = Parser { toks, pos: 0 };
    let start = p.peek().clone();
    let e = p.expr()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.error(&["end of input", "`and`", "`or`"]));
    }
    check(&e).map_err(|message| DslError::Type { line: start.line, column: start.column, message })?;
    Ok(e)
}

/// Parses a boolean condition.
pub fn parse(source: &str) -> Result<Expr, DslError> {
    parse_with(source, typeck::check_condition)
}

/// Parses a value-producing expression (e.g. an action's target location).
pub fn parse_value(source: &str) -> Result<Expr, DslError> {
    parse_with(source, typeck::check_value)
}
