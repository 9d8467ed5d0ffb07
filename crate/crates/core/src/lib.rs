//! Runtime for composing holons into systems of systems.
//!
//! Layers, bottom-up:
//! - [`holon`]: holons, resources, capabilities, local state, sensations.
//! - [`hcfw`]: certificate issuance, composition proposals, voting, secret
//!   rotation and composition merging, driven by a trusted entity.
//! - [`collaboration`]: mediator election, mediator-sequenced shared state and
//!   sensation dispatch.
//! - [`behaviour`]: triggered behaviours, role binding, execution with
//!   suspend/resume.
//!
//! [`simnet`] is the deterministic network and clock everything runs on;
//! [`scenario`] loads scenario files, runs them and checks traces.

pub mod dsl;
pub mod holon;
pub mod simnet;
pub mod trace;
pub mod value;
pub mod wire;
pub mod crypto;
pub mod hcfw;
pub mod collaboration;
pub mod behaviour;
pub mod scenario;
pub mod runtime;
