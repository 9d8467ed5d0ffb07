use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use super::ast::{AggOp, CmpOp, Expr, Path, TemporalOp};
use crate::simnet::Tick;
use crate::value::Value;

/// What a role name resolves to while evaluating a bound behaviour.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoleView {
    pub holon: String,
    pub resource: String,
    /// Names of the resource's currently available capabilities.
    pub capabilities: BTreeSet<String>,
    /// Capability attributes, first declaration wins.
    pub attributes: BTreeMap<String, Value>,
    /// Last reported resource state (`status`, `loc`, ...).
    pub state: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedEvent {
    pub kind: String,
    pub at: Tick,
}

/// Read-only inputs to one evaluation.
///
/// Path lookup order: `locals`, then role `bindings` (first segment), then
/// `shared`. Anything unresolved is `null`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalContext {
    pub bindings: BTreeMap<String, RoleView>,
    pub shared: BTreeMap<String, Value>,
    pub locals: BTreeMap<String, Value>,
    /// Available capability names per holon, for `holon has capability`.
    pub holon_capabilities: BTreeMap<String, BTreeSet<String>>,
    /// Record collections addressable by aggregations, e.g. `members`.
    pub collections: BTreeMap<String, Vec<BTreeMap<String, Value>>>,
    /// Sensation log, sorted by time.
    pub events: Vec<LoggedEvent>,
    pub now: Tick,
}

impl EvalContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_shared(mut self, path: &str, value: impl Into<Value>) -> Self {
        self.shared.insert(path.to_string(), value.into());
        self
    }

    pub fn with_event(mut self, kind: &str, at: Tick) -> Self {
        self.events.push(LoggedEvent { kind: kind.to_string(), at });
        self.events.sort_by_key(|e| e.at);
        self
    }

    pub fn lookup(&self, path: &Path) -> Value {
        let dotted: Cow<'_, str> = match path.0.as_slice() {
            [single] => Cow::Borrowed(single),
            _ => Cow::Owned(path.dotted()),
        };
        if let Some(v) = self.locals.get(dotted.as_ref()) {
            return v.clone();
        }
        if let Some(role) = self.bindings.get(path.head()) {
            let rest = path.tail();
            return match rest.as_str() {
                "" | "holon" => Value::Str(role.holon.clone()),
                "resource" => Value::Str(role.resource.clone()),
                _ => role.state.get(&rest).or_else(|| role.attributes.get(&rest)).cloned().unwrap_or(Value::Null),
            };
        }
        self.shared.get(dotted.as_ref()).cloned().unwrap_or(Value::Null)
    }

    fn has(&self, subject: &Path, capability: &str) -> bool {
        if subject.0.len() == 1 {
            if let Some(role) = self.bindings.get(subject.head()) {
                return role.capabilities.contains(capability);
            }
            if let Some(caps) = self.holon_capabilities.get(subject.head()) {
                return caps.contains(capability);
            }
        }
        false
    }
}

/// Evaluates an expression. Total: never fails on a type-checked tree.
pub fn evaluate(expr: &Expr, ctx: &EvalContext) -> Value {
    match expr {
        Expr::Literal(v) => v.clone(),
        Expr::Path(p) => ctx.lookup(p),
        Expr::List(_) | Expr::Interval(..) | Expr::Event(_) => Value::Null,
        Expr::Not(e) => Value::Bool(!evaluate(e, ctx).is_true()),
        Expr::And(l, r) => Value::Bool(evaluate(l, ctx).is_true() && evaluate(r, ctx).is_true()),
        Expr::Or(l, r) => Value::Bool(evaluate(l, ctx).is_true() || evaluate(r, ctx).is_true()),
        Expr::Cmp(CmpOp::In, l, r) => {
            let needle = evaluate(l, ctx);
            let Expr::List(items) = r.as_ref() else {
                return Value::Bool(false);
            };
            Value::Bool(items.iter().any(|item| needle.same_tag_eq(item) == Some(true)))
        }
        Expr::Cmp(op, l, r) => Value::Bool(compare(*op, &evaluate(l, ctx), &evaluate(r, ctx))),
        Expr::Temporal(op, l, r) => {
            let Expr::Event(a) = l.as_ref() else {
                return Value::Bool(false);
            };
            let other = match r.as_ref() {
                Expr::Event(b) => TemporalOperand::Event(b),
                Expr::Interval(s, e) => TemporalOperand::Interval(*s, *e),
                _ => return Value::Bool(false),
            };
            Value::Bool(temporal_eval(*op, a, other, &ctx.events, ctx.now))
        }
        Expr::Has(subject, cap) => Value::Bool(ctx.has(subject, cap)),
        Expr::Agg { op, selector, field } => aggregate(*op, selector, field.as_deref(), ctx),
    }
}

/// Convenience for trigger use: only `true` counts.
pub fn holds(expr: &Expr, ctx: &EvalContext) -> bool {
    evaluate(expr, ctx).is_true()
}

/// Comparison semantics: `null` or mismatched tags make every operator false.
pub fn compare(op: CmpOp, l: &Value, r: &Value) -> bool {
    match op {
        CmpOp::Eq | CmpOp::Is => l.same_tag_eq(r) == Some(true),
        CmpOp::Ne => l.same_tag_eq(r) == Some(false),
        CmpOp::Gt => l.same_tag_cmp(r) == Some(Ordering::Greater),
        CmpOp::Lt => l.same_tag_cmp(r) == Some(Ordering::Less),
        CmpOp::Ge => matches!(l.same_tag_cmp(r), Some(Ordering::Greater | Ordering::Equal)),
        CmpOp::Le => matches!(l.same_tag_cmp(r), Some(Ordering::Less | Ordering::Equal)),
        CmpOp::In => false,
    }
}

fn aggregate(op: AggOp, selector: &str, field: Option<&str>, ctx: &EvalContext) -> Value {
    let records = ctx.collections.get(selector).map(Vec::as_slice).unwrap_or(&[]);
    let values: Vec<&Value> = match field {
        Some(f) => records.iter().filter_map(|r| r.get(f)).filter(|v| !v.is_null()).collect(),
        None => Vec::new(),
    };
    match op {
        AggOp::Count => Value::Int(if field.is_some() { values.len() } else { records.len() } as i64),
        AggOp::Sum => {
            let mut int_sum = 0i64;
            let mut dec_sum = 0f64;
            let mut any_decimal = false;
            for v in &values {
                match v {
                    Value::Int(i) => int_sum = int_sum.saturating_add(*i),
                    Value::Decimal(d) => {
                        any_decimal = true;
                        dec_sum += d
                    }
                    _ => {}
                }
            }
            if any_decimal {
                Value::Decimal(dec_sum + int_sum as f64)
            } else {
                Value::Int(int_sum)
            }
        }
        AggOp::Average => {
            let nums: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
            if nums.is_empty() {
                Value::Null
            } else {
                Value::Decimal(nums.iter().sum::<f64>() / nums.len() as f64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalOperand<'a> {
    Event(&'a str),
    Interval(Tick, Tick),
}

/// Temporal operators over a time-sorted log, using each kind's last occurrence
/// for `BEFORE` / `AFTER`. Events stamped after `now` are ignored.
pub fn temporal_eval(op: TemporalOp, a: &str, b: TemporalOperand<'_>, log: &[LoggedEvent], now: Tick) -> bool {
    let last = |kind: &str| log.iter().filter(|e| e.kind == kind && e.at <= now).map(|e| e.at).max();
    match (op, b) {
        (TemporalOp::Before, TemporalOperand::Event(b)) => matches!((last(a), last(b)), (Some(x), Some(y)) if x < y),
        (TemporalOp::After, TemporalOperand::Event(b)) => matches!((last(a), last(b)), (Some(x), Some(y)) if x > y),
        (TemporalOp::During, TemporalOperand::Interval(start, end)) => {
            log.iter().any(|e| e.kind == a && e.at <= now && start <= e.at && e.at <= end)
        }
        _ => false,
    }
}
