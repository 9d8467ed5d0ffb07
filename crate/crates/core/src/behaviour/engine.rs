use std::collections::BTreeMap;
use std::fmt;

use super::{Instr, RoleBinding};
use crate::dsl::Expr;
use crate::holon::HolonId;
use crate::simnet::Tick;
use crate::value::{Location, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InstanceStatus {
    Queued,
    Running,
    Suspended,
    Completed,
    Aborted,
}

impl InstanceStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            InstanceStatus::Queued => "queued",
            InstanceStatus::Running => "running",
            InstanceStatus::Suspended => "suspended",
            InstanceStatus::Completed => "completed",
            InstanceStatus::Aborted => "aborted",
        }
    }

    pub fn can_become(self, next: InstanceStatus) -> bool {
        use InstanceStatus::*;
        matches!(
            (self, next),
            (Queued, Running) | (Running, Suspended) | (Suspended, Running) | (Running, Completed) | (Running, Aborted) | (Suspended, Aborted)
        )
    }

    pub fn is_live(self) -> bool {
        matches!(self, InstanceStatus::Queued | InstanceStatus::Running | InstanceStatus::Suspended)
    }
}

impl fmt::Display for InstanceStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a thread is blocked on.
#[derive(Debug, Clone, PartialEq)]
pub enum Wait {
    /// Ready to execute the instruction at its pc.
    Ready,
    /// A timed action finishing at `until`. Travel also records its path so a
    /// suspension can freeze the resource mid-way.
    Timed { until: Tick, travel: Option<Travel> },
    /// Condition re-checked on every shared write, optionally bounded.
    Condition { condition: Expr, deadline: Option<Tick> },
    /// Waiting for an alerted resource or a deployed relay to report back.
    Message,
    /// Parent thread waiting for its forked children.
    Join,
    /// Suspended with this many ticks of a timed action left.
    Frozen { remaining: Tick, travel: Option<Travel> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Travel {
    pub holon: String,
    pub resource: String,
    pub from: Location,
    pub to: Location,
    pub start: Tick,
    pub end: Tick,
}

impl Travel {
    pub fn position_at(&self, t: Tick) -> Location {
        if self.end <= self.start || t >= self.end {
            return self.to;
        }
        let f = t.saturating_sub(self.start) as f64 / (self.end - self.start) as f64;
        self.from.lerp(&self.to, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thread {
    pub program: Vec<Instr>,
    pub pc: usize,
    pub wait: Wait,
    /// Role bound to the loop variable of a forked thread.
    pub alias: Option<(String, String)>,
    pub parent: Option<usize>,
    pub children_left: usize,
    pub done: bool,
    /// Bumped whenever a pending wake-up must be ignored.
    pub token: u64,
}

impl Thread {
    pub fn root(program: Vec<Instr>) -> Self {
        Thread { program, pc: 0, wait: Wait::Ready, alias: None, parent: None, children_left: 0, done: false, token: 0 }
    }

    /// Resolves the loop variable to the role it stands for.
    pub fn resolve<'a>(&'a self, role: &'a str) -> &'a str {
        match &self.alias {
            Some((var, target)) if var == role => target,
            _ => role,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub behaviour: String,
    pub collab: String,
    pub binding: RoleBinding,
    pub status: InstanceStatus,
    pub threads: Vec<Thread>,
    pub locals: BTreeMap<String, Value>,
    pub history: Vec<(Tick, InstanceStatus)>,
    /// Capability whose loss caused the current suspension.
    pub suspended_on: Option<String>,
    /// Resources engaged by actions rather than roles (a deployed relay).
    pub auxiliary: Vec<(HolonId, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IllegalTransition {
    pub from: InstanceStatus,
    pub to: InstanceStatus,
}

impl Instance {
    pub fn new(id: u64, behaviour: &str, collab: &str, binding: RoleBinding, program: Vec<Instr>, at: Tick) -> Self {
        Instance {
            id,
            behaviour: behaviour.to_string(),
            collab: collab.to_string(),
            binding,
            status: InstanceStatus::Queued,
            threads: vec![Thread::root(program)],
            locals: BTreeMap::new(),
            history: vec![(at, InstanceStatus::Queued)],
            suspended_on: None,
            auxiliary: Vec::new(),
        }
    }

    pub fn transition(&mut self, to: InstanceStatus, at: Tick) -> Result<(), IllegalTransition> {
        if !self.status.can_become(to) {
            return Err(IllegalTransition { from: self.status, to });
        }
        self.status = to;
        self.history.push((at, to));
        Ok(())
    }

    /// Program counter of the root thread.
    pub fn pc(&self) -> usize {
        self.threads[0].pc
    }

    /// Position of the instance across all threads, for trace reporting:
    /// root pc, then `.i` for each live forked thread.
    pub fn pc_label(&self) -> String {
        let mut s = self.threads[0].pc.to_string();
        for t in self.threads.iter().skip(1).filter(|t| !t.done) {
            s.push_str(&format!(".{}", t.pc));
        }
        s
    }

    pub fn is_finished(&self) -> bool {
        self.threads[0].done
    }
}
