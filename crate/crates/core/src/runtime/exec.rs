//! Behaviour triggering and execution on top of [`World`].

use super::{join, Msg, TriggerKey, World};
use crate::behaviour::{bind_roles, cheapest_assignment, eligible, Action, BindCandidate, Instance, InstanceStatus, Instr, RoleBinding, RoleSpec, Travel, Wait};
use crate::dsl::{self, EvalContext, Expr, RoleView};
use crate::holon::{CapabilityChange, CapabilityPredicate, HolonId};
use crate::simnet::Tick;
use crate::trace::{TraceEvent, TraceKind};
use crate::value::{Location, Value};

impl World {
    /// Runs every runnable thread and every dirty trigger until nothing moves.
    pub(super) fn settle(&mut self) {
        loop {
            let mut progressed = false;
            let running: Vec<u64> =
                self.instances.values().filter(|i| i.status == InstanceStatus::Running).map(|i| i.id).collect();
            for id in running {
                progressed |= self.advance(id);
            }
            if std::mem::take(&mut self.triggers_dirty) {
                progressed |= self.evaluate_triggers();
            }
            if !progressed {
                break;
            }
        }
    }

    // ---- contexts ----

    fn base_context(&self, cid: &str) -> EvalContext {
        let mut ctx = EvalContext { now: self.now(), ..EvalContext::default() };
        let rt = &self.collabs[cid];
        ctx.events = rt.events.clone();
        if let Some(c) = &rt.state {
            ctx.shared = c.mediator_state().values();
            for p in &c.participants {
                if let Ok(h) = self.registry.get(p) {
                    let caps = h.resources.iter().flat_map(|r| r.capabilities.iter()).filter(|c| c.available).map(|c| c.name.clone());
                    ctx.holon_capabilities.insert(p.to_string(), caps.collect());
                }
            }
        }
        ctx
    }

    fn role_view(&self, cid: &str, holon: &HolonId, resource: &str) -> RoleView {
        let mut view = RoleView { holon: holon.to_string(), resource: resource.to_string(), ..RoleView::default() };
        if let Some(r) = self.registry.get(holon).ok().and_then(|h| h.resource(resource)) {
            for c in &r.capabilities {
                if c.available {
                    view.capabilities.insert(c.name.clone());
                }
                for (k, v) in &c.attributes {
                    view.attributes.entry(k.clone()).or_insert_with(|| v.clone());
                }
            }
        }
        let prefix = format!("{holon}.{resource}.");
        if let Some(c) = &self.collabs[cid].state {
            for (path, v) in c.mediator_state().values() {
                if let Some(rest) = path.strip_prefix(&prefix) {
                    view.state.insert(rest.to_string(), v);
                }
            }
        }
        view.state.entry("loc".into()).or_insert_with(|| {
            let p = self.position(holon, resource);
            Value::loc(p.lat, p.lon)
        });
        view
    }

    fn context(&self, id: u64, thread: usize) -> EvalContext {
        let inst = &self.instances[&id];
        let mut ctx = self.base_context(&inst.collab);
        ctx.locals = inst.locals.clone();
        for (role, h, r) in &inst.binding.0 {
            ctx.bindings.insert(role.clone(), self.role_view(&inst.collab, h, r));
        }
        if let Some((var, target)) = &inst.threads[thread].alias {
            if let Some(v) = ctx.bindings.get(target).cloned() {
                ctx.bindings.insert(var.clone(), v);
            }
        }
        ctx
    }

    fn holds_for(&self, id: u64, thread: usize, condition: &Expr) -> bool {
        dsl::holds(condition, &self.context(id, thread))
    }

    fn eval_for(&self, id: u64, thread: usize, e: &Expr) -> Value {
        dsl::evaluate(e, &self.context(id, thread))
    }

    fn resolve(&self, id: u64, thread: usize, role: &str) -> Option<(HolonId, String)> {
        let inst = &self.instances[&id];
        let role = inst.threads[thread].resolve(role);
        inst.binding.get(role).map(|(h, r)| (h.clone(), r.to_string()))
    }

    // ---- triggers ----

    fn trigger_key(&self, cid: &str, name: &str, trigger: &Expr, ctx: &EvalContext) -> TriggerKey {
        let mediator = self.collabs[cid].state.as_ref().map(|c| c.mediator_state());
        let paths = trigger
            .paths()
            .into_iter()
            .map(|p| {
                let dotted = p.dotted();
                let ts = mediator.and_then(|m| m.get(&dotted)).map_or(0, |e| e.ts);
                (dotted, ts)
            })
            .collect();
        let events = trigger
            .event_kinds()
            .into_iter()
            .map(|k| (k.to_string(), ctx.events.iter().rev().find(|e| e.kind == k).map(|e| e.at)))
            .collect();
        (name.to_string(), paths, events)
    }

    /// Fires every trigger whose condition holds on a state it has not fired on.
    fn evaluate_triggers(&mut self) -> bool {
        let mut fired_any = false;
        let ids: Vec<String> = self.collabs.iter().filter(|(_, rt)| rt.state.is_some()).map(|(id, _)| id.clone()).collect();
        for cid in ids {
            let defs = self.collabs[&cid].defs.clone();
            for def in &defs {
                let ctx = self.base_context(&cid);
                if !dsl::holds(&def.trigger, &ctx) {
                    continue;
                }
                let key = self.trigger_key(&cid, &def.name, &def.trigger, &ctx);
                if self.collabs[&cid].fired.contains(&key) {
                    continue;
                }
                let participants = self.collabs[&cid].state.as_ref().expect("formed").participants.clone();
                match bind_roles(&self.registry, &participants, &def.roles) {
                    Ok(binding) => {
                        let rt = self.collabs.get_mut(&cid).expect("exists");
                        rt.deferred.remove(&key);
                        rt.fired.insert(key);
                        self.fire(&cid, &def.name, &def.program, binding);
                        fired_any = true;
                    }
                    Err(insufficient) => {
                        if self.collabs.get_mut(&cid).expect("exists").deferred.insert(key) {
                            self.record(
                                TraceEvent::new(self.now(), TraceKind::TriggerDeferred)
                                    .with("behaviour", &def.name)
                                    .with("collab", &cid)
                                    .with("missing", join(&insufficient.missing)),
                            );
                        }
                    }
                }
            }
        }
        fired_any
    }

    fn fire(&mut self, cid: &str, behaviour: &str, program: &[Instr], binding: RoleBinding) {
        self.next_instance += 1;
        let id = self.next_instance;
        let now = self.now();
        let mediator = self.mediator_of(cid).expect("formed");
        self.record(
            TraceEvent::new(now, TraceKind::TriggerFired)
                .with("behaviour", behaviour)
                .with("collab", cid)
                .with("instance", id)
                .with("mediator", mediator),
        );
        for (role, h, r) in &binding.0 {
            let busy = self.registry.get(h).ok().and_then(|x| x.resource(r)).and_then(|x| x.engaged_by);
            if let Some(other) = busy {
                self.violation(format!("{h}.{r} bound by instance {id} while engaged by {other}"));
            }
            let _ = self.registry.engage(h, r, id);
            self.record(
                TraceEvent::new(now, TraceKind::RoleBound)
                    .with("behaviour", behaviour)
                    .with("holon", h)
                    .with("instance", id)
                    .with("resource", r)
                    .with("role", role),
            );
        }
        let mut inst = Instance::new(id, behaviour, cid, binding, program.to_vec(), now);
        inst.transition(InstanceStatus::Running, now).expect("queued instances can start");
        self.instances.insert(id, inst);
    }

    // ---- threads ----

    fn advance(&mut self, id: u64) -> bool {
        let mut any = false;
        loop {
            let mut stepped = false;
            let n = self.instances[&id].threads.len();
            for t in 0..n {
                if self.instances[&id].status != InstanceStatus::Running {
                    return any;
                }
                if self.step(id, t) {
                    stepped = true;
                    any = true;
                }
            }
            if !stepped {
                return any;
            }
        }
    }

    fn thread_mut(&mut self, id: u64, t: usize) -> &mut crate::behaviour::Thread {
        &mut self.instances.get_mut(&id).expect("live instance").threads[t]
    }

    fn executed(&self, id: u64, t: usize, action: &str) -> TraceEvent {
        let inst = &self.instances[&id];
        TraceEvent::new(self.now(), TraceKind::ActionExecuted)
            .with("action", action)
            .with("behaviour", &inst.behaviour)
            .with("instance", id)
            .with("pc", inst.threads[t].pc)
    }

    fn proceed(&mut self, id: u64, t: usize) {
        let th = self.thread_mut(id, t);
        th.pc += 1;
        th.wait = Wait::Ready;
    }

    /// Executes at most one instruction of thread `t`.
    fn step(&mut self, id: u64, t: usize) -> bool {
        let th = &self.instances[&id].threads[t];
        if th.done {
            return false;
        }
        match th.wait.clone() {
            Wait::Ready => {}
            Wait::Condition { condition, .. } => {
                if self.holds_for(id, t, &condition) {
                    self.finish_await(id, t, false);
                    return true;
                }
                return false;
            }
            Wait::Join => {
                if th.children_left > 0 {
                    return false;
                }
                let ev = self.executed(id, t, "ForEachAsync");
                self.record(ev);
                self.proceed(id, t);
                return true;
            }
            _ => return false,
        }
        let th = &self.instances[&id].threads[t];
        let Some(instr) = th.program.get(th.pc).cloned() else {
            self.finish_thread(id, t);
            return true;
        };
        match instr {
            Instr::Jump(target) => self.thread_mut(id, t).pc = target,
            Instr::JumpUnless { condition, target } => {
                let taken = self.holds_for(id, t, &condition);
                let ev = self.executed(id, t, "Branch").with("branch", if taken { "then" } else { "else" });
                self.record(ev);
                let th = self.thread_mut(id, t);
                th.pc = if taken { th.pc + 1 } else { target };
            }
            Instr::Fork { var, roles, body } => {
                let inst = self.instances.get_mut(&id).expect("live instance");
                for role in &roles {
                    let mut child = crate::behaviour::Thread::root(body.clone());
                    child.alias = Some((var.clone(), role.clone()));
                    child.parent = Some(t);
                    inst.threads.push(child);
                }
                let th = &mut inst.threads[t];
                th.children_left = roles.len();
                th.wait = Wait::Join;
            }
            Instr::Do(action) => self.start_action(id, t, action),
        }
        true
    }

    fn finish_thread(&mut self, id: u64, t: usize) {
        let th = self.thread_mut(id, t);
        th.done = true;
        if let Some(p) = th.parent {
            self.thread_mut(id, p).children_left -= 1;
        }
        if t == 0 {
            self.complete(id);
        }
    }

    fn schedule_wake(&mut self, id: u64, t: usize, at: Tick) {
        let token = self.instances[&id].threads[t].token;
        let node = self.mediator_of(&self.instances[&id].collab).expect("formed");
        self.net.schedule_timer(node.as_str(), at, Msg::Wake { instance: id, thread: t, token });
    }

    fn start_action(&mut self, id: u64, t: usize, action: Action) {
        let cid = self.instances[&id].collab.clone();
        match action {
            Action::Move { role, to } => {
                let Some((h, r)) = self.resolve(id, t, &role) else { return self.abort(id, &format!("role {role} unbound")) };
                match self.eval_for(id, t, &to).as_location() {
                    Some(target) => self.travel(id, t, &h, &r, target),
                    None => self.abort(id, "move target is not a location"),
                }
            }
            Action::ReturnToBase { role } => {
                let Some((h, r)) = self.resolve(id, t, &role) else { return self.abort(id, &format!("role {role} unbound")) };
                let base = self.registry.get(&h).map(|x| x.base).unwrap_or(Location::new(0.0, 0.0));
                self.travel(id, t, &h, &r, base);
            }
            Action::Invoke { role, capability, duration, .. } => {
                let Some((h, r)) = self.resolve(id, t, &role) else { return self.abort(id, &format!("role {role} unbound")) };
                let cap = self.registry.get(&h).ok().and_then(|x| x.resource(&r)).and_then(|x| x.capability(&capability)).map(|c| c.available);
                match cap {
                    None => self.abort(id, &format!("capability {capability} removed")),
                    Some(false) => self.suspend(id, &h, &r, &capability),
                    Some(true) => {
                        let until = self.now() + duration;
                        self.thread_mut(id, t).wait = Wait::Timed { until, travel: None };
                        self.schedule_wake(id, t, until);
                    }
                }
            }
            Action::SetShared { path, value } => {
                let v = self.eval_for(id, t, &value);
                self.mediator_write(&cid, &path, v.clone());
                let ev = self.executed(id, t, "SetShared").with("path", &path).with("value", v);
                self.record(ev);
                self.proceed(id, t);
            }
            Action::Alert { role, to } => {
                let Some((h, r)) = self.resolve(id, t, &role) else { return self.abort(id, &format!("role {role} unbound")) };
                let to = to.and_then(|e| self.eval_for(id, t, &e).as_location());
                self.mediator_write(&cid, &format!("{h}.{r}.status"), Value::str("dispatched"));
                let mediator = self.mediator_of(&cid).expect("formed");
                let msg = Msg::Alert { collab: cid.clone(), instance: id, resource: r.clone(), to };
                self.send_collab(&cid, &mediator, &h, msg);
                let role = self.instances[&id].threads[t].resolve(&role).to_string();
                let ev = self.executed(id, t, "Alert").with("holon", &h).with("resource", &r).with("role", role);
                self.record(ev);
                self.proceed(id, t);
            }
            Action::AwaitState { condition, timeout } => {
                if self.holds_for(id, t, &condition) {
                    self.finish_await(id, t, false);
                } else {
                    let deadline = timeout.map(|d| self.now() + d);
                    self.thread_mut(id, t).wait = Wait::Condition { condition, deadline };
                    if let Some(d) = deadline {
                        self.schedule_wake(id, t, d);
                    }
                }
            }
            Action::DeployMav { to } => {
                let participants = self.collabs[&cid].state.as_ref().expect("formed").participants.clone();
                let relay = RoleSpec::new("relay", vec![CapabilityPredicate::has("relay")]);
                let candidates: Vec<BindCandidate> = eligible(&self.registry, &participants, &relay);
                let chosen = cheapest_assignment(std::slice::from_ref(&candidates)).map(|a| candidates[a[0]].clone());
                let target = self.eval_for(id, t, &to).as_location();
                match (chosen, target) {
                    (Some(c), Some(target)) => {
                        let _ = self.registry.engage(&c.holon, &c.resource, id);
                        self.instances.get_mut(&id).expect("live").auxiliary.push((c.holon.clone(), c.resource.clone()));
                        self.travel(id, t, &c.holon, &c.resource, target);
                    }
                    (None, _) => {
                        let ev = self.executed(id, t, "DeployMAV").with("deployed", false).with("reason", "no idle relay");
                        self.record(ev);
                        self.proceed(id, t);
                    }
                    (_, None) => self.abort(id, "relay target is not a location"),
                }
            }
            Action::Branch { .. } | Action::ForEachAsync { .. } => unreachable!("compiled away"),
        }
    }

    fn travel(&mut self, id: u64, t: usize, holon: &HolonId, resource: &str, to: Location) {
        let now = self.now();
        let ticks = self.travel_ticks(holon, resource, &to);
        let from = self.position(holon, resource);
        let travel = Travel { holon: holon.to_string(), resource: resource.to_string(), from, to, start: now, end: now + ticks };
        self.thread_mut(id, t).wait = Wait::Timed { until: now + ticks, travel: Some(travel) };
        self.schedule_wake(id, t, now + ticks);
    }

    fn finish_await(&mut self, id: u64, t: usize, timed_out: bool) {
        if timed_out {
            self.instances.get_mut(&id).expect("live").locals.insert("timed_out".into(), Value::Bool(true));
        }
        let ev = self.executed(id, t, "AwaitState").with("timed_out", timed_out);
        self.record(ev);
        self.proceed(id, t);
    }

    pub(super) fn wake(&mut self, id: u64, t: usize, token: u64) {
        let Some(inst) = self.instances.get(&id) else { return };
        let Some(th) = inst.threads.get(t) else { return };
        if inst.status != InstanceStatus::Running || th.token != token || th.done {
            return;
        }
        let now = self.now();
        match th.wait.clone() {
            Wait::Timed { until, travel } if now >= until => self.finish_timed(id, t, travel),
            Wait::Condition { deadline: Some(d), .. } if now >= d => self.finish_await(id, t, true),
            _ => return,
        }
        self.triggers_dirty = true;
    }

    fn finish_timed(&mut self, id: u64, t: usize, travel: Option<Travel>) {
        if let Some(tr) = &travel {
            self.set_position(&HolonId::new(tr.holon.as_str()), &tr.resource, tr.to);
        }
        let th = &self.instances[&id].threads[t];
        let Some(Instr::Do(action)) = th.program.get(th.pc).cloned() else { return self.proceed(id, t) };
        let mut ev = self.executed(id, t, action.name());
        match &action {
            Action::Move { role, .. } | Action::ReturnToBase { role } => {
                let tr = travel.expect("moves travel");
                ev = ev.with("holon", &tr.holon).with("resource", &tr.resource).with("role", role).with("to", Value::loc(tr.to.lat, tr.to.lon));
            }
            Action::Invoke { role, capability, sets, .. } => {
                let Some((h, r)) = self.resolve(id, t, role) else { return };
                let Ok(res) = self.registry.resource_mut(&h, &r) else { return };
                let Some(invoked) = res.capabilities.iter().position(|c| c.name == *capability) else {
                    return self.abort(id, &format!("capability {capability} removed"));
                };
                // An attribute lands on whichever capability declares it, else the invoked one.
                for (k, v) in sets {
                    let i = res.capabilities.iter().position(|c| c.attributes.contains_key(k)).unwrap_or(invoked);
                    res.capabilities[i].attributes.insert(k.clone(), v.clone());
                }
                let locals = &mut self.instances.get_mut(&id).expect("live").locals;
                locals.insert(format!("{capability}.successful"), Value::Bool(true));
                ev = ev.with("capability", capability).with("holon", &h).with("resource", &r).with("role", role);
            }
            Action::DeployMav { .. } => {
                let tr = travel.expect("relays travel");
                let node = format!("{}.{}", tr.holon, tr.resource);
                let cid = self.instances[&id].collab.clone();
                let mediator = self.mediator_of(&cid).expect("formed");
                let field = self.scenario.file.field_node.clone();
                self.net.add_node(node.as_str());
                if let Some(field) = &field {
                    let _ = self.net.set_relay(mediator.as_str(), field, Some(node.clone()));
                }
                self.record(
                    TraceEvent::new(self.now(), TraceKind::MAVDeployed)
                        .with("a", &mediator)
                        .with("b", field.as_deref().unwrap_or("-"))
                        .with("holon", &tr.holon)
                        .with("instance", id)
                        .with("relay", &node)
                        .with("resource", &tr.resource),
                );
                ev = ev.with("holon", &tr.holon).with("resource", &tr.resource);
                if let Some(field) = field {
                    if self.scenario.file.options.video_frames > 0 {
                        let now = self.now();
                        self.net.schedule_timer(&field, now, Msg::SendFrame { instance: id, seq: 0, to: mediator });
                    }
                }
            }
            _ => {}
        }
        self.record(ev);
        self.proceed(id, t);
    }

    // ---- lifecycle ----

    fn transition(&mut self, id: u64, to: InstanceStatus) -> bool {
        let now = self.now();
        let inst = self.instances.get_mut(&id).expect("live");
        match inst.transition(to, now) {
            Ok(()) => true,
            Err(e) => {
                self.violation(format!("instance {id}: illegal transition {} -> {}", e.from, e.to));
                false
            }
        }
    }

    fn release_all(&mut self, id: u64) {
        let inst = &self.instances[&id];
        let held: Vec<(HolonId, String)> =
            inst.binding.0.iter().map(|(_, h, r)| (h.clone(), r.clone())).chain(inst.auxiliary.iter().cloned()).collect();
        for (h, r) in held {
            let _ = self.registry.release(&h, &r, id);
        }
        self.triggers_dirty = true;
    }

    fn complete(&mut self, id: u64) {
        if !self.transition(id, InstanceStatus::Completed) {
            return;
        }
        let b = self.instances[&id].behaviour.clone();
        self.record(TraceEvent::new(self.now(), TraceKind::InstanceCompleted).with("behaviour", b).with("instance", id));
        self.release_all(id);
    }

    fn abort(&mut self, id: u64, reason: &str) {
        let inst = &self.instances[&id];
        let (b, pc) = (inst.behaviour.clone(), inst.pc_label());
        if !self.transition(id, InstanceStatus::Aborted) {
            return;
        }
        for th in &mut self.instances.get_mut(&id).expect("live").threads {
            th.token += 1;
        }
        self.record(
            TraceEvent::new(self.now(), TraceKind::InstanceAborted)
                .with("behaviour", b)
                .with("instance", id)
                .with("pc", pc)
                .with("reason", reason),
        );
        self.release_all(id);
    }

    fn suspend(&mut self, id: u64, holon: &HolonId, resource: &str, capability: &str) {
        if !self.transition(id, InstanceStatus::Suspended) {
            return;
        }
        let now = self.now();
        let mut frozen_at = Vec::new();
        let inst = self.instances.get_mut(&id).expect("live");
        inst.suspended_on = Some(capability.to_string());
        for th in &mut inst.threads {
            th.token += 1;
            if let Wait::Timed { until, travel } = &th.wait {
                let remaining = until.saturating_sub(now);
                if let Some(tr) = travel {
                    frozen_at.push((HolonId::new(tr.holon.as_str()), tr.resource.clone(), tr.position_at(now)));
                }
                th.wait = Wait::Frozen { remaining, travel: travel.clone() };
            }
        }
        let (b, pc) = (inst.behaviour.clone(), inst.pc_label());
        for (h, r, at) in frozen_at {
            self.set_position(&h, &r, at);
        }
        self.record(
            TraceEvent::new(now, TraceKind::InstanceSuspended)
                .with("behaviour", b)
                .with("capability", capability)
                .with("holon", holon)
                .with("instance", id)
                .with("pc", pc)
                .with("resource", resource),
        );
    }

    fn resume(&mut self, id: u64) {
        if !self.transition(id, InstanceStatus::Running) {
            return;
        }
        let now = self.now();
        let n = self.instances[&id].threads.len();
        for t in 0..n {
            let wait = self.instances[&id].threads[t].wait.clone();
            match wait {
                Wait::Frozen { remaining, travel } => {
                    let travel = travel.map(|tr| {
                        let from = self.position(&HolonId::new(tr.holon.as_str()), &tr.resource);
                        Travel { from, start: now, end: now + remaining, ..tr }
                    });
                    self.thread_mut(id, t).wait = Wait::Timed { until: now + remaining, travel };
                    self.schedule_wake(id, t, now + remaining);
                }
                Wait::Condition { deadline: Some(d), .. } => self.schedule_wake(id, t, d.max(now)),
                _ => {}
            }
        }
        let inst = self.instances.get_mut(&id).expect("live");
        inst.suspended_on = None;
        let (b, pc) = (inst.behaviour.clone(), inst.pc_label());
        self.record(TraceEvent::new(now, TraceKind::InstanceResumed).with("behaviour", b).with("instance", id).with("pc", pc));
    }

    /// Capabilities each bound resource of `inst` depends on.
    fn dependencies(&self, inst: &Instance) -> Vec<(HolonId, String, String)> {
        let Some(def) = self.collabs[&inst.collab].defs.iter().find(|d| d.name == inst.behaviour) else { return Vec::new() };
        let mut out = Vec::new();
        for (role, h, r) in &inst.binding.0 {
            for cap in def.uses.get(role).into_iter().flatten() {
                out.push((h.clone(), r.clone(), cap.clone()));
            }
        }
        out
    }

    pub(super) fn on_capability_change(&mut self, changes: &[CapabilityChange], removed: bool) {
        let now = self.now();
        for ch in changes {
            self.record(
                TraceEvent::new(now, TraceKind::MembershipChanged)
                    .with("available", ch.available)
                    .with("capability", &ch.capability)
                    .with("change", if removed { "removed" } else { "availability" })
                    .with("holon", &ch.holon)
                    .with("resource", &ch.resource),
            );
            let affected: Vec<u64> = self
                .instances
                .values()
                .filter(|i| i.status.is_live())
                .filter(|i| self.dependencies(i).iter().any(|(h, r, c)| *h == ch.holon && *r == ch.resource && *c == ch.capability))
                .map(|i| i.id)
                .collect();
            for id in affected {
                let status = self.instances[&id].status;
                if removed {
                    self.abort(id, &format!("capability {}.{} removed", ch.resource, ch.capability));
                } else if !ch.available && status == InstanceStatus::Running {
                    self.suspend(id, &ch.holon, &ch.resource, &ch.capability);
                }
            }
        }
        if !removed && changes.iter().any(|c| c.available) {
            self.resume_ready();
        }
        self.triggers_dirty = true;
    }

    /// Resumes suspended instances whose dependencies are all available again,
    /// in behaviour name then instance order.
    fn resume_ready(&mut self) {
        let mut suspended: Vec<(String, u64)> = self
            .instances
            .values()
            .filter(|i| i.status == InstanceStatus::Suspended)
            .map(|i| (i.behaviour.clone(), i.id))
            .collect();
        suspended.sort();
        for (_, id) in suspended {
            let ready = self.dependencies(&self.instances[&id]).iter().all(|(h, r, c)| {
                self.registry.get(h).ok().and_then(|x| x.resource(r)).is_some_and(|x| x.has_available(c))
            });
            if ready {
                self.resume(id);
            }
        }
    }
}
