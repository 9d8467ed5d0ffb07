//! Behaviours: a trigger condition, role requirements and a body program.
//!
//! Definitions come from scenario records ([`BehaviourSpec`]). Top-level
//! conjuncts of a trigger that only constrain a role (`r has cap`,
//! `r.attr is "v"`) are lifted into that role's predicates, so the remaining
//! trigger reads only shared state and events and binding decides the rest.

mod binding;
mod engine;

pub use binding::{bind_roles, cheapest_assignment, eligible, BindCandidate, Insufficient, RoleBinding};
pub use engine::{IllegalTransition, Instance, InstanceStatus, Thread, Travel, Wait};

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

use crate::dsl::{self, CmpOp, DslError, Expr};
use crate::holon::CapabilityPredicate;
use crate::simnet::Tick;
use crate::value::Value;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviourError {
    #[error("behaviour `{behaviour}`: {source}")]
    Dsl { behaviour: String, source: DslError },
    #[error("behaviour `{behaviour}` references undeclared role `{role}`")]
    UnresolvedRole { behaviour: String, role: String },
    #[error("behaviour `{behaviour}` declares role `{role}` twice")]
    DuplicateRole { behaviour: String, role: String },
    #[error("role `{role}` of `{behaviour}` has no capability requirement")]
    NoPredicates { behaviour: String, role: String },
    #[error("behaviour `{behaviour}`: bad action `{action}`: {message}")]
    BadAction { behaviour: String, action: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoleSpec {
    pub name: String,
    pub predicates: Vec<CapabilityPredicate>,
}

impl RoleSpec {
    pub fn new(name: &str, predicates: Vec<CapabilityPredicate>) -> Self {
        RoleSpec { name: name.to_string(), predicates }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Move { role: String, to: Expr },
    /// Uses a capability for `duration` ticks, then writes `sets` into the
    /// resource's capability attributes and `<capability>.successful = true`
    /// into the instance locals.
    Invoke { role: String, capability: String, duration: Tick, sets: BTreeMap<String, Value> },
    SetShared { path: String, value: Expr },
    /// Dispatches the bound team, optionally to a location. The team reports
    /// `status = "on_site"` through shared state once it arrives.
    Alert { role: String, to: Option<Expr> },
    AwaitState { condition: Expr, timeout: Option<Tick> },
    Branch { condition: Expr, then: Vec<Action>, otherwise: Vec<Action> },
    ForEachAsync { var: String, roles: Vec<String>, body: Vec<Action> },
    ReturnToBase { role: String },
    DeployMav { to: Expr },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Move { .. } => "Move",
            Action::Invoke { .. } => "Invoke",
            Action::SetShared { .. } => "SetShared",
            Action::Alert { .. } => "Alert",
            Action::AwaitState { .. } => "AwaitState",
            Action::Branch { .. } => "Branch",
            Action::ForEachAsync { .. } => "ForEachAsync",
            Action::ReturnToBase { .. } => "ReturnToBase",
            Action::DeployMav { .. } => "DeployMAV",
        }
    }

    fn role(&self) -> Option<&str> {
        match self {
            Action::Move { role, .. }
            | Action::Invoke { role, .. }
            | Action::Alert { role, .. }
            | Action::ReturnToBase { role } => Some(role),
            _ => None,
        }
    }
}

/// Flattened body. Jumps only go forward, so the program counter of a
/// thread never decreases.
#[derive(Debug, Clone, PartialEq)]
pub enum Instr {
    Do(Action),
    /// Evaluates a branch condition; continues on true, jumps on false.
    JumpUnless { condition: Expr, target: usize },
    Jump(usize),
    /// Runs `body` once per role, interleaved, and waits for all of them.
    Fork { var: String, roles: Vec<String>, body: Vec<Instr> },
}

pub fn compile(actions: &[Action]) -> Vec<Instr> {
    let mut out = Vec::new();
    emit(actions, &mut out);
    out
}

fn emit(actions: &[Action], out: &mut Vec<Instr>) {
    for a in actions {
        match a {
            Action::Branch { condition, then, otherwise } => {
                let test = out.len();
                out.push(Instr::JumpUnless { condition: condition.clone(), target: 0 });
                emit(then, out);
                if otherwise.is_empty() {
                    let end = out.len();
                    out[test] = Instr::JumpUnless { condition: condition.clone(), target: end };
                } else {
                    let skip = out.len();
                    out.push(Instr::Jump(0));
                    let else_start = out.len();
                    emit(otherwise, out);
                    let end = out.len();
                    out[test] = Instr::JumpUnless { condition: condition.clone(), target: else_start };
                    out[skip] = Instr::Jump(end);
                }
            }
            Action::ForEachAsync { var, roles, body } => {
                out.push(Instr::Fork { var: var.clone(), roles: roles.clone(), body: compile(body) });
            }
            leaf => out.push(Instr::Do(leaf.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviourDef {
    pub name: String,
    pub trigger: Expr,
    pub roles: Vec<RoleSpec>,
    pub body: Vec<Action>,
    pub program: Vec<Instr>,
    /// Capabilities each role depends on: its `has` predicates plus every
    /// capability the body invokes on it.
    pub uses: BTreeMap<String, BTreeSet<String>>,
}

impl BehaviourDef {
    /// Builds a definition, lifting role conjuncts out of `trigger`.
    pub fn new(name: &str, trigger: &str, roles: Vec<RoleSpec>, body: Vec<Action>) -> Result<Self, BehaviourError> {
        let dsl_err = |source| BehaviourError::Dsl { behaviour: name.to_string(), source };
        let parsed = dsl::parse(trigger).map_err(dsl_err)?;
        let mut roles = roles;
        let mut seen = BTreeSet::new();
        for r in &roles {
            if !seen.insert(r.name.clone()) {
                return Err(BehaviourError::DuplicateRole { behaviour: name.to_string(), role: r.name.clone() });
            }
        }
        let trigger = lift(parsed, &mut roles);
        for r in &roles {
            if r.predicates.is_empty() {
                return Err(BehaviourError::NoPredicates { behaviour: name.to_string(), role: r.name.clone() });
            }
        }
        let declared: BTreeSet<&str> = roles.iter().map(|r| r.name.as_str()).collect();
        check_roles(name, &body, &declared, &BTreeSet::new())?;
        let mut uses: BTreeMap<String, BTreeSet<String>> = roles
            .iter()
            .map(|r| {
                let caps = r
                    .predicates
                    .iter()
                    .filter_map(|p| match p {
                        CapabilityPredicate::Has { has } => Some(has.clone()),
                        _ => None,
                    })
                    .collect();
                (r.name.clone(), caps)
            })
            .collect();
        collect_invokes(&body, &BTreeMap::new(), &mut uses);
        Ok(BehaviourDef { name: name.to_string(), program: compile(&body), trigger, roles, body, uses })
    }

    pub fn from_spec(spec: &BehaviourSpec) -> Result<Self, BehaviourError> {
        let roles = spec
            .roles
            .iter()
            .map(|r| match r {
                RoleDecl::Name(n) => RoleSpec::new(n, Vec::new()),
                RoleDecl::Full { name, requires } => RoleSpec::new(name, requires.clone()),
            })
            .collect();
        let body = spec.body.iter().map(|a| a.to_action(&spec.name)).collect::<Result<Vec<_>, _>>()?;
        BehaviourDef::new(&spec.name, &spec.trigger, roles, body)
    }

    pub fn role(&self, name: &str) -> Option<&RoleSpec> {
        self.roles.iter().find(|r| r.name == name)
    }

    /// Shared-state paths the (lifted) trigger reads.
    pub fn trigger_paths(&self) -> Vec<String> {
        self.trigger.paths().into_iter().map(|p| p.dotted()).collect()
    }
}

fn conjuncts(e: Expr, out: &mut Vec<Expr>) {
    match e {
        Expr::And(l, r) => {
            conjuncts(*l, out);
            conjuncts(*r, out);
        }
        other => out.push(other),
    }
}

fn lift(trigger: Expr, roles: &mut [RoleSpec]) -> Expr {
    let mut parts = Vec::new();
    conjuncts(trigger, &mut parts);
    let mut kept = Vec::new();
    for part in parts {
        let lifted = match &part {
            Expr::Has(p, cap) if p.0.len() == 1 => roles.iter_mut().find(|r| r.name == p.head()).map(|r| {
                r.predicates.push(CapabilityPredicate::has(cap));
            }),
            Expr::Cmp(op, l, r) if *op != CmpOp::In => match (l.as_ref(), r.as_ref()) {
                (Expr::Path(p), Expr::Literal(v)) if p.0.len() == 2 => {
                    roles.iter_mut().find(|role| role.name == p.head()).map(|role| {
                        role.predicates.push(CapabilityPredicate::attribute(&p.0[1], *op, v.clone()));
                    })
                }
                _ => None,
            },
            _ => None,
        };
        if lifted.is_none() {
            kept.push(part);
        }
    }
    kept.into_iter().reduce(Expr::and).unwrap_or(Expr::lit(true))
}

fn check_roles(
    behaviour: &str,
    actions: &[Action],
    declared: &BTreeSet<&str>,
    vars: &BTreeSet<String>,
) -> Result<(), BehaviourError> {
    let unresolved =
        |role: &str| BehaviourError::UnresolvedRole { behaviour: behaviour.to_string(), role: role.to_string() };
    for a in actions {
        if let Some(role) = a.role() {
            if !declared.contains(role) && !vars.contains(role) {
                return Err(unresolved(role));
            }
        }
        match a {
            Action::Branch { then, otherwise, .. } => {
                check_roles(behaviour, then, declared, vars)?;
                check_roles(behaviour, otherwise, declared, vars)?;
            }
            Action::ForEachAsync { var, roles, body } => {
                if let Some(r) = roles.iter().find(|r| !declared.contains(r.as_str())) {
                    return Err(unresolved(r));
                }
                let mut inner = vars.clone();
                inner.insert(var.clone());
                check_roles(behaviour, body, declared, &inner)?;
            }
            _ => {}
        }
    }
    Ok(())
}

fn collect_invokes(
    actions: &[Action],
    vars: &BTreeMap<String, Vec<String>>,
    uses: &mut BTreeMap<String, BTreeSet<String>>,
) {
    for a in actions {
        match a {
            Action::Invoke { role, capability, .. } => {
                let targets = vars.get(role).cloned().unwrap_or_else(|| vec![role.clone()]);
                for t in targets {
                    uses.entry(t).or_default().insert(capability.clone());
                }
            }
            Action::Branch { then, otherwise, .. } => {
                collect_invokes(then, vars, uses);
                collect_invokes(otherwise, vars, uses);
            }
            Action::ForEachAsync { var, roles, body } => {
                let mut inner = vars.clone();
                inner.insert(var.clone(), roles.clone());
                collect_invokes(body, &inner, uses);
            }
            _ => {}
        }
    }
}

/// A behaviour as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviourSpec {
    pub name: String,
    pub trigger: String,
    #[serde(default)]
    pub roles: Vec<RoleDecl>,
    #[serde(default)]
    pub body: Vec<ActionSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum RoleDecl {
    Name(String),
    Full {
        name: String,
        #[serde(default)]
        requires: Vec<CapabilityPredicate>,
    },
}

/// Either a one-line call such as `move(searcher, sosCall.loc)` or a record
/// for the compound forms.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ActionSpec {
    Line(String),
    Record(ActionRecord),
}

fn one() -> Tick {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionRecord {
    Move {
        role: String,
        to: String,
    },
    Invoke {
        role: String,
        capability: String,
        #[serde(default = "one")]
        duration: Tick,
        #[serde(default)]
        sets: BTreeMap<String, Value>,
    },
    Set {
        path: String,
        value: String,
    },
    Alert {
        role: String,
        #[serde(default)]
        to: Option<String>,
    },
    Await {
        condition: String,
        #[serde(default)]
        timeout: Option<Tick>,
    },
    If {
        condition: String,
        then: Vec<ActionSpec>,
        #[serde(default, rename = "else")]
        otherwise: Vec<ActionSpec>,
    },
    ForEachAsync {
        var: String,
        roles: Vec<String>,
        #[serde(rename = "do")]
        body: Vec<ActionSpec>,
    },
    ReturnToBase {
        role: String,
    },
    #[serde(rename = "deploy_mav")]
    DeployMav {
        to: String,
    },
}

impl ActionSpec {
    pub fn to_action(&self, behaviour: &str) -> Result<Action, BehaviourError> {
        match self {
            ActionSpec::Line(line) => parse_line(behaviour, line),
            ActionSpec::Record(r) => r.to_action(behaviour),
        }
    }
}

fn expr_err(behaviour: &str) -> impl Fn(DslError) -> BehaviourError + '_ {
    move |source| BehaviourError::Dsl { behaviour: behaviour.to_string(), source }
}

fn actions(behaviour: &str, specs: &[ActionSpec]) -> Result<Vec<Action>, BehaviourError> {
    specs.iter().map(|s| s.to_action(behaviour)).collect()
}

impl ActionRecord {
    fn to_action(&self, behaviour: &str) -> Result<Action, BehaviourError> {
        let value = |src: &str| dsl::parse_value(src).map_err(expr_err(behaviour));
        let cond = |src: &str| dsl::parse(src).map_err(expr_err(behaviour));
        Ok(match self {
            ActionRecord::Move { role, to } => Action::Move { role: role.clone(), to: value(to)? },
            ActionRecord::Invoke { role, capability, duration, sets } => Action::Invoke {
                role: role.clone(),
                capability: capability.clone(),
                duration: *duration,
                sets: sets.clone(),
            },
            ActionRecord::Set { path, value: v } => Action::SetShared { path: path.clone(), value: value(v)? },
            ActionRecord::Alert { role, to } => Action::Alert {
                role: role.clone(),
                to: to.as_deref().map(value).transpose()?,
            },
            ActionRecord::Await { condition, timeout } => {
                Action::AwaitState { condition: cond(condition)?, timeout: *timeout }
            }
            ActionRecord::If { condition, then, otherwise } => Action::Branch {
                condition: cond(condition)?,
                then: actions(behaviour, then)?,
                otherwise: actions(behaviour, otherwise)?,
            },
            ActionRecord::ForEachAsync { var, roles, body } => {
                Action::ForEachAsync { var: var.clone(), roles: roles.clone(), body: actions(behaviour, body)? }
            }
            ActionRecord::ReturnToBase { role } => Action::ReturnToBase { role: role.clone() },
            ActionRecord::DeployMav { to } => Action::DeployMav { to: value(to)? },
        })
    }
}

/// Splits on commas outside quotes, parentheses and brackets.
fn split_args(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut quoted = false;
    let mut escaped = false;
    let mut cur = String::new();
    for c in s.chars() {
        if quoted {
            cur.push(c);
            match (escaped, c) {
                (false, '\\') => escaped = true,
                (false, '"') => quoted = false,
                _ => escaped = false,
            }
            continue;
        }
        match c {
            '"' => {
                quoted = true;
                cur.push(c);
            }
            '(' | '[' => {
                depth += 1;
                cur.push(c);
            }
            ')' | ']' => {
                depth -= 1;
                cur.push(c);
            }
            ',' if depth == 0 => out.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_line(behaviour: &str, line: &str) -> Result<Action, BehaviourError> {
    let bad = |message: &str| BehaviourError::BadAction {
        behaviour: behaviour.to_string(),
        action: line.to_string(),
        message: message.to_string(),
    };
    let line = line.trim();
    let (name, rest) = line.split_once('(').ok_or_else(|| bad("expected `name(args)`"))?;
    let inner = rest.strip_suffix(')').ok_or_else(|| bad("missing closing `)`"))?;
    let args = split_args(inner);
    let arity = |n: std::ops::RangeInclusive<usize>| {
        if n.contains(&args.len()) {
            Ok(())
        } else {
            Err(bad(&format!("expected {} to {} arguments, found {}", n.start(), n.end(), args.len())))
        }
    };
    let value = |src: &str| dsl::parse_value(src).map_err(expr_err(behaviour));
    let ident = |src: &str| {
        if !src.is_empty() && src.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            Ok(src.to_string())
        } else {
            Err(bad(&format!("`{src}` is not a name")))
        }
    };
    Ok(match name.trim() {
        "move" => {
            arity(2..=2)?;
            Action::Move { role: ident(&args[0])?, to: value(&args[1])? }
        }
        "invoke" => {
            arity(2..=3)?;
            let duration = match args.get(2) {
                Some(d) => d.parse().map_err(|_| bad("duration must be a tick count"))?,
                None => 1,
            };
            Action::Invoke { role: ident(&args[0])?, capability: ident(&args[1])?, duration, sets: BTreeMap::new() }
        }
        "set" => {
            arity(2..=2)?;
            Action::SetShared { path: args[0].clone(), value: value(&args[1])? }
        }
        "alert" => {
            arity(1..=2)?;
            Action::Alert { role: ident(&args[0])?, to: args.get(1).map(|a| value(a)).transpose()? }
        }
        "await" => {
            arity(1..=2)?;
            let timeout = match args.get(1) {
                Some(t) => Some(t.parse().map_err(|_| bad("timeout must be a tick count"))?),
                None => None,
            };
            Action::AwaitState { condition: dsl::parse(&args[0]).map_err(expr_err(behaviour))?, timeout }
        }
        "returnToBase" | "return_to_base" => {
            arity(1..=1)?;
            Action::ReturnToBase { role: ident(&args[0])? }
        }
        "deployMAV" | "deploy_mav" => {
            arity(1..=1)?;
            Action::DeployMav { to: value(&args[0])? }
        }
        other => return Err(bad(&format!("unknown action `{other}`"))),
    })
}
