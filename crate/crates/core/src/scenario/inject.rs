use std::collections::BTreeMap;

use thiserror::Error;

use super::file::InjectionSpec;
use crate::dsl::{self, Expr};
use crate::simnet::Tick;
use crate::value::Value;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InjectError {
    #[error("empty injection")]
    Empty,
    #[error("bad tick `{0}`")]
    BadTick(String),
    #[error("`{0}` continues no field")]
    Dangling(String),
}

/// Parses `[@tick] Kind [observer=H] key=value ...`.
///
/// A bare word after a field continues its value, so `type=missing person`
/// reads as one string. Values that parse as literals (`3`, `true`,
/// `loc(1, 2)`, `"x"`) keep their type; anything else is a string.
pub fn parse_injection(spec: &str, default_at: Tick) -> Result<InjectionSpec, InjectError> {
    let mut words = spec.split_whitespace().peekable();
    let mut at = default_at;
    if let Some(w) = words.peek() {
        if let Some(t) = w.strip_prefix('@') {
            at = t.parse().map_err(|_| InjectError::BadTick(t.to_string()))?;
            words.next();
        }
    }
    let kind = words.next().ok_or(InjectError::Empty)?.to_string();
    let mut fields: Vec<(String, String)> = Vec::new();
    for w in words {
        match w.split_once('=') {
            Some((k, v)) if !k.is_empty() => fields.push((k.to_string(), v.to_string())),
            _ => match fields.last_mut() {
                Some((_, v)) => {
                    v.push(' ');
                    v.push_str(w);
                }
                None => return Err(InjectError::Dangling(w.to_string())),
            },
        }
    }
    let mut observer = None;
    let mut payload = BTreeMap::new();
    for (k, v) in fields {
        if k == "observer" {
            observer = Some(v);
        } else {
            payload.insert(k, literal(&v));
        }
    }
    Ok(InjectionSpec { at, observer, kind, payload })
}

fn literal(text: &str) -> Value {
    match dsl::parse_value(text) {
        Ok(Expr::Literal(v)) => v,
        _ => Value::str(text),
    }
}
