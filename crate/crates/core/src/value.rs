//! Closed value model shared by holon state, sensations and the condition language.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Absolute tolerance used for every decimal comparison.
pub const DECIMAL_TOLERANCE: f64 = 1e-9;

/// A tagged scalar value.
///
/// Equality and ordering are only defined between values carrying the same
/// tag. Comparing across tags (or against `Null`) never succeeds, which keeps
/// condition evaluation total over partially populated state.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Decimal(f64),
    Str(String),
    Location(Location),
}

/// A latitude/longitude pair in decimal degrees, treated as a planar point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
}

impl Location {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    /// Planar Euclidean distance in degree units.
    pub fn distance(&self, other: &Location) -> f64 {
        let dlat = self.lat - other.lat;
        let dlon = self.lon - other.lon;
        (dlat * dlat + dlon * dlon).sqrt()
    }

    /// Point `fraction` of the way from `self` to `other`.
    pub fn lerp(&self, other: &Location, fraction: f64) -> Location {
        let f = fraction.clamp(0.0, 1.0);
        Location::new(
            self.lat + (other.lat - self.lat) * f,
            self.lon + (other.lon - self.lon) * f,
        )
    }
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    pub fn loc(lat: f64, lon: f64) -> Self {
        Value::Location(Location::new(lat, lon))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Only `Bool(true)` is truthy.
    pub fn is_true(&self) -> bool {
        matches!(self, Value::Bool(true))
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Decimal(_) => "decimal",
            Value::Str(_) => "string",
            Value::Location(_) => "location",
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_location(&self) -> Option<Location> {
        match self {
            Value::Location(l) => Some(*l),
            _ => None,
        }
    }

    /// Numeric view used by aggregation and cost comparisons.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Decimal(d) => Some(*d),
            _ => None,
        }
    }

    /// Same-tag equality. `None` when the tags differ or either side is null.
    pub fn same_tag_eq(&self, other: &Value) -> Option<bool> {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => Some(a == b),
            (Value::Int(a), Value::Int(b)) => Some(a == b),
            (Value::Decimal(a), Value::Decimal(b)) => Some((a - b).abs() <= DECIMAL_TOLERANCE),
            (Value::Str(a), Value::Str(b)) => Some(a == b),
            (Value::Location(a), Value::Location(b)) => Some(
                (a.lat - b.lat).abs() <= DECIMAL_TOLERANCE
                    && (a.lon - b.lon).abs() <= DECIMAL_TOLERANCE,
            ),
            _ => None,
        }
    }

    /// Same-tag ordering. Defined for integers, decimals and strings only.
    pub fn same_tag_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (Value::Decimal(a), Value::Decimal(b)) => {
                if (a - b).abs() <= DECIMAL_TOLERANCE {
                    Some(Ordering::Equal)
                } else {
                    a.partial_cmp(b)
                }
            }
            (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }

    /// Canonical textual form, also accepted by the condition parser as a literal.
    pub fn to_literal(&self) -> String {
        match self {
            Value::Null => "null".into(),
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Decimal(d) => format_decimal(*d),
            Value::Str(s) => quote(s),
            Value::Location(l) => {
                format!("loc({}, {})", format_decimal(l.lat), format_decimal(l.lon))
            }
        }
    }
}

/// Shortest round-tripping decimal text that always reads back as a decimal.
pub fn format_decimal(d: f64) -> String {
    let s = format!("{d:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Double-quoted string with `\"`, `\\` and `\n` escapes.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl PartialEq for Value {
    /// Structural equality (`Null == Null`), unlike [`Value::same_tag_eq`].
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Decimal(a), Value::Decimal(b)) => a.to_bits() == b.to_bits() || a == b,
            (Value::Location(a), Value::Location(b)) => a == b,
            _ => self.same_tag_eq(other).unwrap_or(false),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => f.write_str(s),
            Value::Location(l) => write!(f, "{},{}", format_decimal(l.lat), format_decimal(l.lon)),
            other => f.write_str(&other.to_literal()),
        }
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<f64> for Value {
    fn from(d: f64) -> Self {
        Value::Decimal(d)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl From<Location> for Value {
    fn from(l: Location) -> Self {
        Value::Location(l)
    }
}
