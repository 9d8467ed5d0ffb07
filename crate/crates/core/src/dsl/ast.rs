use std::fmt;

use serde::{Deserialize, Serialize};

use crate::simnet::Tick;
use crate::value::{quote, Value};

/// Dotted path such as `sosCall.type`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path(pub Vec<String>);

impl Path {
    pub fn parse(dotted: &str) -> Path {
        Path(dotted.split('.').map(str::to_string).collect())
    }

    pub fn head(&self) -> &str {
        &self.0[0]
    }

    /// Everything after the first segment, dotted; empty for single-segment paths.
    pub fn tail(&self) -> String {
        self.0[1..].join(".")
    }

    pub fn dotted(&self) -> String {
        self.0.join(".")
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dotted())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "is")]
    Is,
    #[serde(rename = "in")]
    In,
}

impl CmpOp {
    pub const ALL: [CmpOp; 8] = [CmpOp::Gt, CmpOp::Lt, CmpOp::Ge, CmpOp::Le, CmpOp::Eq, CmpOp::Ne, CmpOp::Is, CmpOp::In];

    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Is => "is",
            CmpOp::In => "in",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemporalOp {
    Before,
    After,
    During,
}

impl TemporalOp {
    pub fn keyword(&self) -> &'static str {
        match self {
            TemporalOp::Before => "BEFORE",
            TemporalOp::After => "AFTER",
            TemporalOp::During => "DURING",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggOp {
    Count,
    Average,
    Sum,
}

impl AggOp {
    pub fn keyword(&self) -> &'static str {
        match self {
            AggOp::Count => "COUNT",
            AggOp::Average => "AVERAGE",
            AggOp::Sum => "SUM",
        }
    }
}

/// Condition / value expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    Path(Path),
    /// Literal list, the right operand of `in`.
    List(Vec<Value>),
    /// Closed virtual-time interval, the right operand of `DURING`.
    Interval(Tick, Tick),
    /// `sensation("kind")` event selector.
    Event(String),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Temporal(TemporalOp, Box<Expr>, Box<Expr>),
    Has(Path, String),
    Agg { op: AggOp, selector: String, field: Option<String> },
}

pub(crate) const KEYWORDS: &[&str] = &[
    "and", "or", "not", "is", "in", "has", "true", "false", "null", "BEFORE", "AFTER", "DURING", "COUNT", "AVERAGE",
    "SUM",
];

impl Expr {
    pub fn path(dotted: &str) -> Expr {
        Expr::Path(Path::parse(dotted))
    }

    pub fn lit(v: impl Into<Value>) -> Expr {
        Expr::Literal(v.into())
    }

    pub fn not(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    pub fn and(l: Expr, r: Expr) -> Expr {
        Expr::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Expr, r: Expr) -> Expr {
        Expr::Or(Box::new(l), Box::new(r))
    }

    pub fn cmp(op: CmpOp, l: Expr, r: Expr) -> Expr {
        Expr::Cmp(op, Box::new(l), Box::new(r))
    }

    pub fn temporal(op: TemporalOp, l: Expr, r: Expr) -> Expr {
        Expr::Temporal(op, Box::new(l), Box::new(r))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Or(..) => 1,
            Expr::And(..) => 2,
            Expr::Cmp(..) | Expr::Temporal(..) | Expr::Has(..) => 3,
            Expr::Not(_) => 4,
            _ => 5,
        }
    }

    /// Every path referenced by the expression, in first-occurrence order.
    pub fn paths(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        self.visit(&mut |e| match e {
            Expr::Path(p) | Expr::Has(p, _)
                if !out.contains(&p) => {
                    out.push(p)
                }
            _ => {}
        });
        out
    }

    /// Every `sensation(kind)` selector referenced by the expression.
    pub fn event_kinds(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Event(k) = e {
                if !out.contains(&k.as_str()) {
                    out.push(k.as_str());
                }
            }
        });
        out
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Not(e) => e.visit(f),
            Expr::And(l, r) | Expr::Or(l, r) | Expr::Cmp(_, l, r) | Expr::Temporal(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
            _ => {}
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let parens = self.precedence() < min;
        if parens {
            f.write_str("(")?;
        }
        match self {
            Expr::Literal(v) => f.write_str(&v.to_literal())?,
            Expr::Path(p) => write!(f, "{p}")?,
            Expr::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str(&v.to_literal())?;
                }
                f.write_str("]")?;
            }
            Expr::Interval(a, b) => write!(f, "[{a}, {b}]")?,
            Expr::Event(kind) => write!(f, "sensation({})", quote(kind))?,
            Expr::Not(e) => {
                f.write_str("not ")?;
                e.write(f, 4)?;
            }
            Expr::And(l, r) => {
                l.write(f, 2)?;
                f.write_str(" and ")?;
                r.write(f, 3)?;
            }
            Expr::Or(l, r) => {
                l.write(f, 1)?;
                f.write_str(" or ")?;
                r.write(f, 2)?;
            }
            Expr::Cmp(op, l, r) => {
                l.write(f, 3)?;
                write!(f, " {} ", op.symbol())?;
                r.write(f, 4)?;
            }
            Expr::Temporal(op, l, r) => {
                l.write(f, 3)?;
                write!(f, " {} ", op.keyword())?;
                r.write(f, 4)?;
            }
            Expr::Has(p, cap) => write!(f, "{p} has {cap}")?,
            Expr::Agg { op, selector, field } => match field {
                Some(field) => write!(f, "{}({selector}.{field})", op.keyword())?,
                None => write!(f, "{}({selector})", op.keyword())?,
            },
        }
        if parens {
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Canonical printed form; `parse` reads it back to an identical tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, 0)
    }
}
