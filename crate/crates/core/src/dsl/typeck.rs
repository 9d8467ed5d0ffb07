use super::ast::{CmpOp, Expr, TemporalOp};
use crate::value::Value;

/// Static type of an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Bool,
    Num,
    Str,
    Loc,
    /// Paths and `null`: known only at evaluation time.
    Any,
    List,
    Interval,
    Event,
}

impl Ty {
    fn is_scalar(self) -> bool {
        matches!(self, Ty::Bool | Ty::Num | Ty::Str | Ty::Loc | Ty::Any)
    }

    fn is_boolish(self) -> bool {
        matches!(self, Ty::Bool | Ty::Any)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ty::Bool => "boolean",
            Ty::Num => "number",
            Ty::Str => "string",
            Ty::Loc => "location",
            Ty::Any => "value",
            Ty::List => "list",
            Ty::Interval => "interval",
            Ty::Event => "event selector",
        }
    }
}

fn literal_ty(v: &Value) -> Ty {
    match v {
        Value::Null => Ty::Any,
        Value::Bool(_) => Ty::Bool,
        Value::Int(_) | Value::Decimal(_) => Ty::Num,
        Value::Str(_) => Ty::Str,
        Value::Location(_) => Ty::Loc,
    }
}

/// Type of a node given the types of its direct children.
pub(crate) fn node_type(expr: &Expr, child: impl Fn(&Expr) -> Result<Ty, String>) -> Result<Ty, String> {
    Ok(match expr {
        Expr::Literal(v) => literal_ty(v),
        Expr::Path(_) => Ty::Any,
        Expr::List(_) => Ty::List,
        Expr::Interval(a, b) => {
            if a > b {
                return Err(format!("interval start {a} is after its end {b}"));
            }
            Ty::Interval
        }
        Expr::Event(_) => Ty::Event,
        Expr::Has(..) => Ty::Bool,
        Expr::Agg { .. } => Ty::Num,
        Expr::Not(e) => {
            let t = child(e)?;
            if !t.is_boolish() {
                return Err(format!("`not` expects a boolean, found {}", t.name()));
            }
            Ty::Bool
        }
        Expr::And(l, r) | Expr::Or(l, r) => {
            let op = if matches!(expr, Expr::And(..)) { "and" } else { "or" };
            for side in [l, r] {
                let t = child(side)?;
                if !t.is_boolish() {
                    return Err(format!("`{op}` expects boolean operands, found {}", t.name()));
                }
            }
            Ty::Bool
        }
        Expr::Cmp(op, l, r) => {
            let (lt, rt) = (child(l)?, child(r)?);
            if !lt.is_scalar() {
                return Err(format!("`{}` cannot compare a {}", op.symbol(), lt.name()));
            }
            match op {
                CmpOp::In if rt != Ty::List => {
                    return Err(format!("`in` expects a literal list, found {}", rt.name()));
                }
                CmpOp::In => {}
                _ if !rt.is_scalar() => {
                    return Err(format!("`{}` cannot compare a {}", op.symbol(), rt.name()));
                }
                _ => {}
            }
            Ty::Bool
        }
        Expr::Temporal(op, l, r) => {
            let (lt, rt) = (child(l)?, child(r)?);
            if lt != Ty::Event {
                return Err(format!("`{}` expects an event selector on the left, found {}", op.keyword(), lt.name()));
            }
            let want = if *op == TemporalOp::During { Ty::Interval } else { Ty::Event };
            if rt != want {
                return Err(format!("`{}` expects {} on the right, found {}", op.keyword(), want.name(), rt.name()));
            }
            Ty::Bool
        }
    })
}

/// Type-checks a whole tree.
pub fn type_of(expr: &Expr) -> Result<Ty, String> {
    node_type(expr, type_of)
}

/// Conditions must be boolean (or a path that may hold one).
pub fn check_condition(expr: &Expr) -> Result<(), String> {
    let t = type_of(expr)?;
    if t.is_boolish() {
        Ok(())
    } else {
        Err(format!("condition must be boolean, found {}", t.name()))
    }
}

/// Value expressions must produce a scalar.
pub fn check_value(expr: &Expr) -> Result<(), String> {
    let t = type_of(expr)?;
    if t.is_scalar() {
        Ok(())
    } else {
        Err(format!("expression must produce a value, found {}", t.name()))
    }
}
