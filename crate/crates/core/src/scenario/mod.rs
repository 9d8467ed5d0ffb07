//! Scenario files, command-line injections and trace assertions.

mod file;
mod inject;
mod verify;

pub use file::{
    from_str, load, validate, AvailabilitySpec, CollaborationSpec, CompositionSpec, InjectionSpec, LinkEventSpec, LinkSpec,
    RuleSpec, RuntimeOptions, Scenario, ScenarioError, ScenarioErrors, ScenarioFile,
};
pub use inject::{parse_injection, InjectError};
pub use verify::{check, parse_assertions, verify, Assertion, AssertionResult, CountOp, EventPattern, MalformedAssertion};
