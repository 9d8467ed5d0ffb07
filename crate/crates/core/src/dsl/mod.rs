//! Condition language for membership rules and behaviour triggers.
//!
//! ```text
//! sosCall.type is "wildfire" and waterCarrier has waterTank
//! sosCall.type in ["rescue", "stranded"]
//! AVERAGE(members.battery) > 0.5 or not (COUNT(members) >= 3)
//! sensation("comeback") AFTER sensation("SOS")
//! sensation("SOS") DURING [10, 20]
//! ```

mod ast;
mod eval;
mod parser;
mod typeck;

pub use ast::{AggOp, CmpOp, Expr, Path, TemporalOp};
pub use eval::{compare, evaluate, holds, temporal_eval, EvalContext, LoggedEvent, RoleView, TemporalOperand};
pub use parser::{parse, parse_value, DslError};
pub use typeck::{check_condition, check_value, type_of, Ty};
