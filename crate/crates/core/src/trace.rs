//! Line-oriented run traces: `t=<tick> <Kind> k1=v1 k2=v2 ...` with sorted keys.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::simnet::Tick;

macro_rules! trace_kinds {
    ($($kind:ident),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum TraceKind {
            $($kind),*
        }

        impl TraceKind {
            pub const ALL: &'static [TraceKind] = &[$(TraceKind::$kind),*];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $(TraceKind::$kind => stringify!($kind)),*
                }
            }
        }

        impl FromStr for TraceKind {
            type Err = TraceParseError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $(stringify!($kind) => Ok(TraceKind::$kind),)*
                    other => Err(TraceParseError::UnknownKind(other.to_string())),
                }
            }
        }
    };
}

trace_kinds!(
    CertIssued,
    InitFailed,
    ProposalCreated,
    VoteCast,
    CompositionFinalized,
    CompositionRejected,
    MembershipChanged,
    SecretRotated,
    MediatorSelected,
    SensationEmitted,
    SensationDelivered,
    SharedWrite,
    TriggerFired,
    TriggerDeferred,
    RoleBound,
    ActionExecuted,
    InstanceSuspended,
    InstanceResumed,
    InstanceCompleted,
    InstanceAborted,
    LinkChanged,
    MAVDeployed,
    MessageDropped,
    StateSnapshot,
);

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown trace event kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub tick: Tick,
    pub kind: TraceKind,
    pub attrs: BTreeMap<String, String>,
}

impl TraceEvent {
    pub fn new(tick: Tick, kind: TraceKind) -> Self {
        TraceEvent { tick, kind, attrs: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.attrs.insert(key.to_string(), value.to_string());
        self
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    pub fn parse_line(line: &str) -> Result<TraceEvent, TraceParseError> {
        let malformed = |message: &str| TraceParseError::Malformed { line: 0, message: message.to_string() };
        let tokens = tokenize(line).map_err(|e| malformed(&e))?;
        let mut it = tokens.into_iter();
        let tick = match it.next() {
            Some(Token::Pair(k, v)) if k == "t" => v.parse::<Tick>().map_err(|_| malformed("bad tick"))?,
            _ => return Err(malformed("expected `t=<tick>`")),
        };
        let kind = match it.next() {
            Some(Token::Word(w)) => w.parse::<TraceKind>()?,
            _ => return Err(malformed("expected event kind")),
        };
        let mut attrs = BTreeMap::new();
        for token in it {
            match token {
                Token::Pair(k, v) => {
                    attrs.insert(k, v);
                }
                Token::Word(w) => return Err(malformed(&format!("expected key=value, got `{w}`"))),
            }
        }
        Ok(TraceEvent { tick, kind, attrs })
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} {}", self.tick, self.kind)?;
        for (k, v) in &self.attrs {
            write!(f, " {}={}", k, encode_attr(v))?;
        }
        Ok(())
    }
}

fn is_bare(c: char) -> bool {
    c.is_ascii_alphanumeric() || "_.:,-+/@()[]".contains(c)
}

/// Attribute values are written bare when safe, otherwise double-quoted.
pub fn encode_attr(v: &str) -> String {
    if !v.is_empty() && v.chars().all(is_bare) {
        v.to_string()
    } else {
        crate::value::quote(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Word(String),
    Pair(String, String),
}

/// Splits a line into bare words and `key=value` pairs; values may be quoted.
pub fn tokenize(line: &str) -> Result<Vec<Token>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let mut word = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() || c == '=' {
                break;
            }
            word.push(c);
            chars.next();
        }
        if chars.peek() == Some(&'=') {
            chars.next();
            let value = if chars.peek() == Some(&'"') {
                chars.next();
                let mut v = String::new();
                loop {
                    match chars.next() {
                        None => return Err("unterminated quoted value".into()),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some('n') => v.push('\n'),
                            Some(c @ ('"' | '\\')) => v.push(c),
                            _ => return Err("bad escape in quoted value".into()),
                        },
                        Some(c) => v.push(c),
                    }
                }
                v
            } else {
                let mut v = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() {
                        break;
                    }
                    v.push(c);
                    chars.next();
                }
                v
            };
            if word.is_empty() {
                return Err("empty key".into());
            }
            out.push(Token::Pair(word, value));
        } else {
            out.push(Token::Word(word));
        }
    }
    Ok(out)
}

/// An append-only, tick-ordered event log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: TraceEvent) {
        debug_assert!(self.events.last().is_none_or(|last| last.tick <= event.tick));
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Serialized form: one event per line, trailing newline.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Trace, TraceParseError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event = TraceEvent::parse_line(line).map_err(|e| match e {
                TraceParseError::Malformed { message, .. } => TraceParseError::Malformed { line: i + 1, message },
                other => other,
            })?;
            if let Some(last) = events.last() {
                let last: &TraceEvent = last;
                if last.tick > event.tick {
                    return Err(TraceParseError::Malformed {
                        line: i + 1,
                        message: "ticks must be non-decreasing".into(),
                    });
                }
            }
            events.push(event);
        }
        Ok(Trace { events })
    }
}

impl FromIterator<TraceEvent> for Trace {
    fn from_iter<T: IntoIterator<Item = TraceEvent>>(iter: T) -> Self {
        Trace { events: iter.into_iter().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_sorted_keys() {
        let e = TraceEvent::new(7, TraceKind::SharedWrite)
            .with("value", "missing person")
            .with("path", "sosCall.type");
        assert_eq!(e.to_string(), "t=7 SharedWrite path=sosCall.type value=\"missing person\"");
    }

    #[test]
    fn rejects_unknown_kind_and_decreasing_ticks() {
        assert!(TraceEvent::parse_line("t=1 Bogus").is_err());
        assert!(Trace::parse("t=2 VoteCast\nt=1 VoteCast\n").is_err());
    }

    proptest! {
        #[test]
        fn line_round_trip(
            tick in 0u64..1_000_000,
            kind in 0usize..TraceKind::ALL.len(),
            attrs in proptest::collection::btree_map("[a-z][a-zA-Z_.]{0,8}", "[ -~]{0,12}", 0..5),
        ) {
            let event = TraceEvent { tick, kind: TraceKind::ALL[kind], attrs };
            let parsed = TraceEvent::parse_line(&event.to_string()).unwrap();
            prop_assert_eq!(parsed, event);
        }
    }
}
