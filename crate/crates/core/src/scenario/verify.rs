use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::trace::{tokenize, Token, Trace, TraceEvent, TraceKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: malformed assertion: {message}")]
pub struct MalformedAssertion {
    pub line: usize,
    pub message: String,
}

/// An event kind plus attributes that must all match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventPattern {
    pub kind: TraceKind,
    pub attrs: BTreeMap<String, String>,
}

impl EventPattern {
    pub fn matches(&self, e: &TraceEvent) -> bool {
        e.kind == self.kind && self.attrs.iter().all(|(k, v)| e.attr(k) == Some(v.as_str()))
    }
}

impl fmt::Display for EventPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        for (k, v) in &self.attrs {
            write!(f, " {k}={}", crate::trace::encode_attr(v))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CountOp {
    fn parse(s: &str) -> Option<CountOp> {
        Some(match s {
            "=" | "==" => CountOp::Eq,
            "!=" => CountOp::Ne,
            "<" => CountOp::Lt,
            "<=" => CountOp::Le,
            ">" => CountOp::Gt,
            ">=" => CountOp::Ge,
            _ => return None,
        })
    }

    fn holds(self, l: usize, r: usize) -> bool {
        match self {
            CountOp::Eq => l == r,
            CountOp::Ne => l != r,
            CountOp::Lt => l < r,
            CountOp::Le => l <= r,
            CountOp::Gt => l > r,
            CountOp::Ge => l >= r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assertion {
    Exists(EventPattern),
    Absent(EventPattern),
    /// Each pattern matches a strictly later event than the previous one.
    Order(Vec<EventPattern>),
    Count(EventPattern, CountOp, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertionResult {
    pub line: usize,
    pub text: String,
    pub passed: bool,
    pub detail: String,
}

fn pattern(tokens: &[Token], line: usize) -> Result<EventPattern, MalformedAssertion> {
    let err = |message: String| MalformedAssertion { line, message };
    let (first, rest) = tokens.split_first().ok_or_else(|| err("missing event kind".into()))?;
    let kind = match first {
        Token::Word(w) => w.parse::<TraceKind>().map_err(|_| err(format!("unknown event kind `{w}`")))?,
        Token::Pair(k, _) => return Err(err(format!("expected event kind, found `{k}=`"))),
    };
    let mut attrs = BTreeMap::new();
    for t in rest {
        match t {
            Token::Pair(k, v) => {
                attrs.insert(k.clone(), v.clone());
            }
            Token::Word(w) => return Err(err(format!("expected key=value, found `{w}`"))),
        }
    }
    Ok(EventPattern { kind, attrs })
}

/// Parses an assertions file: one assertion per line, `#` comments.
///
/// ```text
/// exists TriggerFired behaviour=wildfireResp
/// absent TriggerFired behaviour=rescue
/// order CompositionFinalized before MediatorSelected
/// count VoteCast == 4
/// ```
pub fn parse_assertions(text: &str) -> Result<Vec<(usize, String, Assertion)>, MalformedAssertion> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let err = |message: String| MalformedAssertion { line, message };
        let (head, tail) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
        let assertion = match head {
            "exists" => Assertion::Exists(pattern(&tokenize(tail).map_err(err)?, line)?),
            "absent" => Assertion::Absent(pattern(&tokenize(tail).map_err(err)?, line)?),
            "order" => {
                let rest = tokenize(tail).map_err(err)?;
                let parts: Vec<&[Token]> = rest.split(|t| *t == Token::Word("before".into())).collect();
                if parts.len() < 2 {
                    return Err(err("`order` needs at least one `before`".into()));
                }
                Assertion::Order(parts.into_iter().map(|p| pattern(p, line)).collect::<Result<_, _>>()?)
            }
            "count" => {
                // Operator and number are split off first: `==` is not a valid attribute token.
                let mut words = tail.trim_end().rsplitn(3, char::is_whitespace);
                let (n, op, rest) = match (words.next(), words.next(), words.next()) {
                    (Some(n), Some(op), Some(rest)) => (n, op, rest),
                    _ => return Err(err("expected `count Kind [k=v ...] <op> N`".into())),
                };
                let n = n.parse::<usize>().map_err(|_| err(format!("bad count `{n}`")))?;
                let op = CountOp::parse(op).ok_or_else(|| err(format!("bad operator `{op}`")))?;
                Assertion::Count(pattern(&tokenize(rest).map_err(err)?, line)?, op, n)
            }
            other => return Err(err(format!("unknown assertion `{other}`"))),
        };
        out.push((line, body.to_string(), assertion));
    }
    Ok(out)
}

pub fn check(trace: &Trace, assertion: &Assertion) -> (bool, String) {
    let events = trace.events();
    match assertion {
        Assertion::Exists(p) => match events.iter().find(|e| p.matches(e)) {
            Some(e) => (true, format!("found at t={}", e.tick)),
            None => (false, format!("no event matches `{p}`")),
        },
        Assertion::Absent(p) => match events.iter().find(|e| p.matches(e)) {
            Some(e) => (false, format!("unexpected `{e}`")),
            None => (true, "none found".into()),
        },
        Assertion::Order(ps) => {
            let mut from = 0;
            let mut ticks = Vec::new();
            for p in ps {
                match events[from..].iter().position(|e| p.matches(e)) {
                    Some(i) => {
                        ticks.push(events[from + i].tick.to_string());
                        from += i + 1;
                    }
                    None => return (false, format!("no `{p}` after the preceding events")),
                }
            }
            (true, format!("at t={}", ticks.join(",")))
        }
        Assertion::Count(p, op, n) => {
            let c = events.iter().filter(|e| p.matches(e)).count();
            (op.holds(c, *n), format!("counted {c}"))
        }
    }
}

/// Evaluates every assertion in `text` against `trace`.
pub fn verify(trace: &Trace, text: &str) -> Result<Vec<AssertionResult>, MalformedAssertion> {
    Ok(parse_assertions(text)?
        .into_iter()
        .map(|(line, text, a)| {
            let (passed, detail) = check(trace, &a);
            AssertionResult { line, text, passed, detail }
        })
        .collect())
}
