//! Runs a scenario: every holon, the trusted entity and the field node are
//! nodes on one [`SimNet`], and all state changes happen in its delivery and
//! timer handlers.

mod exec;

use std::collections::{BTreeMap, BTreeSet};

use crate::behaviour::{BehaviourDef, Instance};
use crate::collaboration::{Collaboration, SharedEntry};
use crate::crypto::{CryptoProvider, Sealed};
use crate::dsl::LoggedEvent;
use crate::hcfw::{FormationRequest, Hcfw, MembershipRule, MessageBody, Outcome, Phase, ProposalId, ProtocolMessage};
use crate::holon::{HolonId, HolonRegistry, Sensation, SensationSource};
use crate::scenario::{CollaborationSpec, InjectionSpec, Scenario};
use crate::simnet::{Decision, Envelope, Event, LinkQuality, RunLimit, SimNet, Tick};
use crate::trace::{Trace, TraceEvent, TraceKind};
use crate::value::{Location, Value};

/// Everything that travels on the network or sits in its timer queue.
#[derive(Debug, Clone)]
pub enum Msg {
    Protocol(ProtocolMessage),
    /// Composition traffic sealed under the composition secret.
    Sealed(Sealed),
    /// Participant write on its way to the mediator.
    Write { collab: String, path: String, entry: SharedEntry },
    /// Mediator rebroadcast of an accepted write.
    Update { collab: String, path: String, entry: SharedEntry },
    Sensation { collab: String, sensation: Sensation },
    Alert { collab: String, instance: u64, resource: String, to: Option<Location> },
    Frame { instance: u64, seq: u32, sent: Tick },

    VoteTimeout(ProposalId),
    Wake { instance: u64, thread: usize, token: u64 },
    Inject(usize),
    LinkEvent(usize),
    Availability(usize),
    Arrived { collab: String, holon: HolonId, resource: String, to: Option<Location> },
    SendFrame { instance: u64, seq: u32, to: HolonId },
    Reelect { collab: String, epoch: u64 },
    Snapshot,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Absolute duration cap; overrides the scenario's.
    pub until: Option<Tick>,
    /// Extra injections, appended after the scenario's own.
    pub injections: Vec<InjectionSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    /// Sealed deliveries the recipient could not open.
    pub unreadable: usize,
    pub delivered: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub trace: Trace,
    pub violations: Vec<String>,
    /// Tick at which setup (certificates, formation, collaborations) quiesced.
    pub setup_end: Tick,
    pub end: Tick,
    pub capped: bool,
    pub stats: Stats,
    /// Per-transmission jitter and drop draws, in draw order.
    pub decisions: Vec<Decision>,
}

impl RunReport {
    /// 0 on quiescence, 1 on an invariant violation, 2 when the cap was hit.
    pub fn exit_code(&self) -> i32 {
        if !self.violations.is_empty() {
            1
        } else if self.capped {
            2
        } else {
            0
        }
    }
}

type TriggerKey = (String, Vec<(String, u64)>, Vec<(String, Option<Tick>)>);

pub struct CollabRuntime {
    pub spec: CollaborationSpec,
    pub defs: Vec<BehaviourDef>,
    pub state: Option<Collaboration>,
    /// Sensations seen by the mediator, for temporal conditions.
    pub events: Vec<LoggedEvent>,
    fired: BTreeSet<TriggerKey>,
    deferred: BTreeSet<TriggerKey>,
    /// Sensations already handled by the mediator.
    seen: BTreeSet<u64>,
    reelect_epoch: Option<u64>,
}

pub struct World {
    pub net: SimNet<Msg>,
    pub registry: HolonRegistry,
    pub hcfw: Hcfw,
    pub collabs: BTreeMap<String, CollabRuntime>,
    pub instances: BTreeMap<u64, Instance>,
    pub stats: Stats,
    scenario: Scenario,
    injections: Vec<InjectionSpec>,
    positions: BTreeMap<(HolonId, String), Location>,
    formations: BTreeMap<ProposalId, FormationRequest>,
    submitted: BTreeSet<String>,
    violations: Vec<String>,
    next_instance: u64,
    next_sensation: u64,
    next_epoch: u64,
    triggers_dirty: bool,
    setup_end: Tick,
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

impl World {
    pub fn new(scenario: &Scenario, options: &RunOptions) -> World {
        let file = &scenario.file;
        let seed = options.seed.unwrap_or(file.seed);
        let mut net = SimNet::new(seed, file.net);
        let mut registry = HolonRegistry::new();
        let mut positions = BTreeMap::new();
        for h in &file.holons {
            registry.register(h).expect("validated scenario");
            net.add_node(h.id.as_str());
            let base = registry.get(&h.id).expect("just registered").base;
            for r in &h.resources {
                positions.insert((h.id.clone(), r.name.clone()), base);
            }
        }
        net.add_node(file.trusted_entity.as_str());
        if let Some(f) = &file.field_node {
            net.add_node(f.as_str());
        }
        for l in &file.links {
            net.configure_link(&l.a, &l.b, l.delay.unwrap_or(file.net.default_delay), l.drop.unwrap_or(file.net.default_drop))
                .expect("validated scenario");
            net.set_link(&l.a, &l.b, l.quality).expect("validated scenario");
        }
        let collabs = file
            .collaborations
            .iter()
            .map(|c| {
                let rt = CollabRuntime {
                    spec: c.clone(),
                    defs: scenario.behaviours.get(&c.id).cloned().unwrap_or_default(),
                    state: None,
                    events: Vec::new(),
                    fired: BTreeSet::new(),
                    deferred: BTreeSet::new(),
                    seen: BTreeSet::new(),
                    reelect_epoch: None,
                };
                (c.id.clone(), rt)
            })
            .collect();
        let mut injections = file.injections.clone();
        injections.extend(options.injections.iter().cloned());
        World {
            net,
            registry,
            hcfw: Hcfw::with_ledger(file.trusted_entity.as_str()),
            collabs,
            instances: BTreeMap::new(),
            stats: Stats::default(),
            scenario: scenario.clone(),
            injections,
            positions,
            formations: BTreeMap::new(),
            submitted: BTreeSet::new(),
            violations: Vec::new(),
            next_instance: 0,
            next_sensation: 0,
            next_epoch: 0,
            triggers_dirty: false,
            setup_end: 0,
        }
    }

    /// Runs setup, then the scheduled inputs, until quiescence or `until`.
    pub fn run(scenario: &Scenario, options: &RunOptions) -> RunReport {
        let mut world = World::new(scenario, options);
        let until = options.until.or(scenario.file.options.until);
        let limit = until.map_or(RunLimit::Quiescence, RunLimit::Until);
        world.start();
        world.drive(limit);
        world.setup_end = world.net.now();
        world.schedule_inputs();
        world.drive(limit);
        let capped = !world.net.is_quiescent();
        if let Some(u) = until {
            if capped {
                world.net.advance_to(u);
            }
        }
        world.finish(capped)
    }

    fn start(&mut self) {
        let mut holons: Vec<HolonId> = self.scenario.file.holons.iter().map(|h| h.id.clone()).collect();
        holons.sort();
        for h in &holons {
            // A failure is recorded as InitFailed by the protocol itself.
            let _ = self.hcfw.initialize(&self.net, h);
        }
        self.flush_protocol();
    }

    fn schedule_inputs(&mut self) {
        let t0 = self.setup_end;
        let file = &self.scenario.file;
        let default_observer = file.options.default_observer.clone();
        for (i, inj) in self.injections.iter().enumerate() {
            let observer = inj.observer.clone().or_else(|| default_observer.clone()).unwrap_or_default();
            if self.net.has_node(&observer) {
                self.net.schedule_timer(&observer, t0 + inj.at, Msg::Inject(i));
            }
        }
        for (i, l) in file.link_schedule.iter().enumerate() {
            self.net.schedule_timer(&l.a, t0 + l.at, Msg::LinkEvent(i));
        }
        for (i, a) in file.availability_schedule.iter().enumerate() {
            self.net.schedule_timer(&a.holon, t0 + a.at, Msg::Availability(i));
        }
        if let Some(every) = file.options.snapshot_interval.filter(|e| *e > 0) {
            if !self.net.is_quiescent() {
                let te = file.trusted_entity.clone();
                self.net.schedule_timer(&te, t0 + every, Msg::Snapshot);
            }
        }
    }

    fn drive(&mut self, limit: RunLimit) {
        while let Some(event) = self.net.next(limit) {
            match event {
                Event::Deliver(envelope) => self.deliver(envelope),
                Event::Timer { node, payload } => self.timer(&node, payload),
            }
            self.settle();
        }
    }

    pub(crate) fn now(&self) -> Tick {
        self.net.now()
    }

    pub(crate) fn record(&mut self, event: TraceEvent) {
        self.net.record(event);
    }

    fn violation(&mut self, message: String) {
        self.violations.push(format!("t={}: {message}", self.now()));
    }

    // ---- protocol ----

    fn flush_protocol(&mut self) {
        let (messages, events) = self.hcfw.drain();
        for e in events {
            self.record(e);
        }
        for m in messages {
            self.send_protocol(m);
        }
    }

    fn send_protocol(&mut self, m: ProtocolMessage) {
        let (src, dst) = (m.sender.to_string(), m.recipient.to_string());
        let sealed_under = m.sealed_under();
        let payload = match sealed_under {
            Some(secret) => Msg::Sealed(self.hcfw.crypto().seal(secret, &m.encode())),
            None => Msg::Protocol(m),
        };
        self.net.send(&src, &dst, payload, sealed_under).expect("protocol endpoints are nodes");
    }

    fn handle_protocol(&mut self, at: &str, m: ProtocolMessage) {
        let te = self.hcfw.trusted_entity().clone();
        let now = self.now();
        match m.body {
            MessageBody::CertGrant { certificate } => {
                if self.hcfw.verify_certificate(&certificate) {
                    self.submit_formations(&certificate.subject);
                }
            }
            MessageBody::ProposalSubmit { proposal, .. } if at == te.as_str() => {
                let Some(request) = self.formations.remove(&proposal) else { return };
                let composition = request.composition_id.clone();
                match self.hcfw.propose_composition(&self.registry, now, request) {
                    Ok(id) => self.open_vote(&id),
                    Err(e) => {
                        let mut ev = TraceEvent::new(now, TraceKind::CompositionRejected)
                            .with("proposal", &proposal)
                            .with("reason", e);
                        if let Some(c) = composition {
                            ev = ev.with("composition", c);
                        }
                        self.record(ev);
                    }
                }
                self.flush_protocol();
            }
            MessageBody::VoteRequest { proposal } => {
                let me = HolonId::new(at);
                let yes = self.registry.get(&me).map(|h| h.accepts_proposals).unwrap_or(false);
                let reply = ProtocolMessage { sender: me, recipient: te, body: MessageBody::VoteCast { proposal, yes } };
                self.send_protocol(reply);
            }
            MessageBody::VoteCast { proposal, yes } if at == te.as_str()
                && self.hcfw.cast_vote(now, &m.sender, &proposal, yes).is_ok() => {
                    self.flush_protocol();
                    if self.hcfw.ready(&proposal, now) {
                        self.finalize(&proposal);
                    }
                }
            // Results, grants and secrets only update the recipient's own view.
            _ => {}
        }
    }

    fn submit_formations(&mut self, holon: &HolonId) {
        let specs: Vec<_> = self
            .scenario
            .file
            .compositions
            .iter()
            .filter(|c| c.initiator == holon.as_str() && !self.submitted.contains(&c.id))
            .cloned()
            .collect();
        for c in specs {
            self.submitted.insert(c.id.clone());
            let behaviours: Vec<String> = self
                .collabs
                .values()
                .filter(|rt| rt.spec.composition == c.id)
                .flat_map(|rt| rt.defs.iter().map(|d| d.name.clone()))
                .collect();
            let rules = c
                .rules
                .iter()
                .filter_map(|r| MembershipRule::parse(&r.condition, r.action, r.target.clone()).ok())
                .collect();
            let id = self.hcfw.allocate_proposal_id();
            let mut request = FormationRequest::new(holon.clone(), c.candidates.iter().map(|s| HolonId::new(s.as_str())))
                .named(c.id.as_str())
                .with_voting(c.voting)
                .with_rules(rules)
                .with_behaviours(behaviours.iter().map(String::as_str));
            request.proposal_id = Some(id.clone());
            let candidates = request.candidates.clone();
            self.formations.insert(id.clone(), request);
            let te = self.hcfw.trusted_entity().clone();
            self.send_protocol(ProtocolMessage {
                sender: holon.clone(),
                recipient: te,
                body: MessageBody::ProposalSubmit { proposal: id, candidates },
            });
        }
    }

    fn open_vote(&mut self, id: &ProposalId) {
        if let Some(p) = self.hcfw.proposal(id) {
            let deadline = p.deadline();
            let te = self.hcfw.trusted_entity().to_string();
            self.net.schedule_timer(&te, deadline, Msg::VoteTimeout(id.clone()));
        }
    }

    fn finalize(&mut self, id: &ProposalId) {
        let now = self.now();
        let outcome = self.hcfw.finalize(&mut self.registry, now, id);
        self.flush_protocol();
        if let Ok(Outcome::Formed(record)) = outcome {
            let ids: Vec<String> =
                self.collabs.values().filter(|rt| rt.spec.composition == record.composition_id.as_str()).map(|rt| rt.spec.id.clone()).collect();
            for cid in ids {
                self.form_collaboration(&cid, &record);
            }
        }
    }

    fn form_collaboration(&mut self, cid: &str, record: &crate::hcfw::CompositionRecord) {
        let rt = &self.collabs[cid];
        let wanted: BTreeSet<HolonId> = match &rt.spec.participants {
            Some(p) => p.iter().map(|s| HolonId::new(s.as_str())).collect(),
            None => record.members.clone(),
        };
        let participants: BTreeSet<HolonId> = wanted.intersection(&record.members).cloned().collect();
        let behaviours = rt.defs.iter().map(|d| d.name.clone()).collect();
        match Collaboration::form(cid, record, participants, rt.spec.policy.clone(), &self.registry, &rt.spec.shared, behaviours) {
            Ok(c) => {
                self.record(
                    TraceEvent::new(self.now(), TraceKind::MediatorSelected)
                        .with("collab", cid)
                        .with("composition", &record.composition_id)
                        .with("mediator", &c.mediator)
                        .with("participants", join(&c.participants)),
                );
                self.collabs.get_mut(cid).expect("exists").state = Some(c);
            }
            Err(e) => self.violation(format!("collaboration {cid} not formed: {e}")),
        }
    }

    // ---- delivery ----

    fn secret_of(&self, cid: &str) -> Option<crate::crypto::SecretId> {
        let c = self.collabs.get(cid)?.state.as_ref()?;
        self.hcfw.composition(&c.composition).map(|r| r.composition_secret)
    }

    /// Sends collaboration traffic sealed under the composition's current secret.
    pub(crate) fn send_collab(&mut self, cid: &str, src: &HolonId, dst: &HolonId, msg: Msg) {
        let secret = self.secret_of(cid);
        self.net.send(src.as_str(), dst.as_str(), msg, secret).expect("participants are nodes");
    }

    fn deliver(&mut self, envelope: Envelope<Msg>) {
        let dst = envelope.dst.clone();
        if let Msg::Sealed(sealed) = &envelope.payload {
            let opened = self.hcfw.crypto().unseal(&HolonId::new(dst.as_str()), sealed).and_then(|b| ProtocolMessage::decode(&b).ok());
            match opened {
                Some(m) => {
                    self.stats.delivered += 1;
                    self.handle_protocol(&dst, m);
                }
                None => self.stats.unreadable += 1,
            }
            return;
        }
        if let Some(secret) = envelope.sealed_under {
            if !self.hcfw.crypto().holds(&HolonId::new(dst.as_str()), secret) {
                self.stats.unreadable += 1;
                return;
            }
        }
        self.stats.delivered += 1;
        let me = HolonId::new(dst.as_str());
        let latency = envelope.deliver_time - envelope.send_time;
        let route = envelope.route.to_string();
        match envelope.payload {
            Msg::Protocol(m) => self.handle_protocol(&dst, m),
            Msg::Write { collab, path, entry } => self.receive_write(&collab, &me, &path, entry),
            Msg::Update { collab, path, entry } => {
                if let Some(c) = self.collabs.get_mut(&collab).and_then(|rt| rt.state.as_mut()) {
                    let _ = c.receive(&me, &path, entry);
                }
            }
            Msg::Sensation { collab, sensation } => self.receive_sensation(&collab, &me, sensation, &route, latency),
            Msg::Alert { collab, instance: _, resource, to } => {
                let ticks = to.map_or(0, |t| self.travel_ticks(&me, &resource, &t));
                let at = self.now() + ticks;
                self.net.schedule_timer(me.as_str(), at, Msg::Arrived { collab, holon: me.clone(), resource, to });
            }
            Msg::Frame { instance, seq, sent } => {
                let now = self.now();
                self.record(
                    TraceEvent::new(now, TraceKind::SensationDelivered)
                        .with("holon", &me)
                        .with("instance", instance)
                        .with("kind", "videoFeed")
                        .with("latency", now - sent)
                        .with("route", route)
                        .with("seq", seq),
                );
            }
            _ => {}
        }
    }

    fn timer(&mut self, node: &str, msg: Msg) {
        match msg {
            Msg::VoteTimeout(id) => {
                if self.hcfw.proposal(&id).is_some_and(|p| p.phase == Phase::Voting) {
                    self.finalize(&id);
                }
            }
            Msg::Wake { instance, thread, token } => self.wake(instance, thread, token),
            Msg::Inject(i) => {
                let inj = self.injections[i].clone();
                let observer = HolonId::new(node);
                self.emit_sensation(&observer, &inj.kind, inj.payload, SensationSource::External);
            }
            Msg::LinkEvent(i) => {
                let l = self.scenario.file.link_schedule[i].clone();
                self.change_link(&l.a, &l.b, l.quality);
            }
            Msg::Availability(i) => {
                let a = self.scenario.file.availability_schedule[i].clone();
                let holon = HolonId::new(a.holon.as_str());
                let changes = if a.remove {
                    self.registry.remove_capability(&holon, &a.capability)
                } else {
                    self.registry.set_capability_available(&holon, &a.capability, a.available)
                };
                if let Ok(changes) = changes {
                    self.on_capability_change(&changes, a.remove);
                }
            }
            Msg::Arrived { collab, holon, resource, to } => {
                if let Some(t) = to {
                    self.positions.insert((holon.clone(), resource.clone()), t);
                }
                let path = format!("{holon}.{resource}.status");
                self.participant_write(&collab, &holon, &path, Value::str("on_site"));
            }
            Msg::SendFrame { instance, seq, to } => {
                let frames = self.scenario.file.options.video_frames;
                let now = self.now();
                let _ = self.net.send(node, to.as_str(), Msg::Frame { instance, seq, sent: now }, None);
                if seq + 1 < frames {
                    self.net.schedule_timer(node, now + 1, Msg::SendFrame { instance, seq: seq + 1, to });
                }
            }
            Msg::Reelect { collab, epoch } => self.reelect(&collab, epoch),
            Msg::Snapshot => {
                self.snapshot();
                if !self.net.is_quiescent() {
                    if let Some(every) = self.scenario.file.options.snapshot_interval {
                        let at = self.now() + every;
                        self.net.schedule_timer(node, at, Msg::Snapshot);
                    }
                }
            }
            _ => {}
        }
    }

    // ---- links and mediator failure ----

    fn change_link(&mut self, a: &str, b: &str, quality: LinkQuality) {
        let Ok(Some(change)) = self.net.set_link(a, b, quality) else { return };
        for (end, peer) in [(&change.a, &change.b), (&change.b, &change.a)] {
            let holon = HolonId::new(end.as_str());
            if self.registry.contains(&holon) {
                let payload = BTreeMap::from([
                    ("peer".to_string(), Value::str(peer.as_str())),
                    ("quality".to_string(), Value::str(quality.as_str())),
                ]);
                self.emit_sensation(&holon, "LinkChanged", payload, SensationSource::Holon(holon.clone()));
            }
        }
        self.check_isolation();
    }

    fn isolated(&self, c: &Collaboration) -> bool {
        let others: Vec<&HolonId> = c.participants.iter().filter(|p| **p != c.mediator).collect();
        !others.is_empty() && others.iter().all(|p| self.net.link(c.mediator.as_str(), p.as_str()).quality == LinkQuality::Down)
    }

    fn check_isolation(&mut self) {
        let timeout = self.scenario.file.options.reelection_timeout;
        let ids: Vec<String> = self.collabs.keys().cloned().collect();
        for cid in ids {
            let Some(c) = self.collabs[&cid].state.as_ref() else { continue };
            let isolated = self.isolated(c);
            let mediator = c.mediator.clone();
            let rt = self.collabs.get_mut(&cid).expect("exists");
            match (isolated, rt.reelect_epoch) {
                (true, None) => {
                    self.next_epoch += 1;
                    rt.reelect_epoch = Some(self.next_epoch);
                    let at = self.net.now() + timeout;
                    self.net.schedule_timer(mediator.as_str(), at, Msg::Reelect { collab: cid, epoch: self.next_epoch });
                }
                (false, Some(_)) => rt.reelect_epoch = None,
                _ => {}
            }
        }
    }

    fn reelect(&mut self, cid: &str, epoch: u64) {
        let Some(rt) = self.collabs.get(cid) else { return };
        if rt.reelect_epoch != Some(epoch) {
            return;
        }
        let Some(c) = rt.state.as_ref() else { return };
        if !self.isolated(c) {
            return;
        }
        let reachable: BTreeSet<HolonId> = c.participants.iter().filter(|p| **p != c.mediator).cloned().collect();
        let rt = self.collabs.get_mut(cid).expect("exists");
        rt.reelect_epoch = None;
        let c = rt.state.as_mut().expect("formed");
        if let Ok(true) = c.reselect(&self.registry, &reachable) {
            let (mediator, participants) = (c.mediator.clone(), join(&c.participants));
            self.record(
                TraceEvent::new(self.now(), TraceKind::MediatorSelected)
                    .with("collab", cid)
                    .with("mediator", mediator)
                    .with("participants", participants)
                    .with("reason", "reelection"),
            );
            self.triggers_dirty = true;
        }
    }

    // ---- shared state ----

    pub(crate) fn mediator_of(&self, cid: &str) -> Option<HolonId> {
        self.collabs.get(cid)?.state.as_ref().map(|c| c.mediator.clone())
    }

    /// Accepted write at the mediator: traced and rebroadcast.
    fn commit(&mut self, cid: &str, path: &str, entry: SharedEntry) {
        let now = self.now();
        self.record(
            TraceEvent::new(now, TraceKind::SharedWrite)
                .with("collab", cid)
                .with("path", path)
                .with("ts", entry.ts)
                .with("value", &entry.value)
                .with("writer", &entry.writer),
        );
        let c = self.collabs[cid].state.as_ref().expect("formed");
        let mediator = c.mediator.clone();
        for p in c.fan_out() {
            let msg = Msg::Update { collab: cid.to_string(), path: path.to_string(), entry: entry.clone() };
            self.send_collab(cid, &mediator, &p, msg);
        }
        self.triggers_dirty = true;
    }

    pub(crate) fn mediator_write(&mut self, cid: &str, path: &str, value: Value) {
        let Some(mediator) = self.mediator_of(cid) else { return };
        let c = self.collabs.get_mut(cid).and_then(|rt| rt.state.as_mut()).expect("formed");
        let entry = c.write_local(&mediator, path, value).expect("mediator participates");
        self.commit(cid, path, entry);
    }

    pub(crate) fn participant_write(&mut self, cid: &str, writer: &HolonId, path: &str, value: Value) {
        let Some(mediator) = self.mediator_of(cid) else { return };
        if *writer == mediator {
            self.mediator_write(cid, path, value);
            return;
        }
        let c = self.collabs.get_mut(cid).and_then(|rt| rt.state.as_mut()).expect("formed");
        let Ok(entry) = c.write_local(writer, path, value) else { return };
        let msg = Msg::Write { collab: cid.to_string(), path: path.to_string(), entry };
        self.send_collab(cid, writer, &mediator, msg);
    }

    fn receive_write(&mut self, cid: &str, at: &HolonId, path: &str, entry: SharedEntry) {
        let Some(mediator) = self.mediator_of(cid) else { return };
        let c = self.collabs.get_mut(cid).and_then(|rt| rt.state.as_mut()).expect("formed");
        let Ok(taken) = c.receive(at, path, entry.clone()) else { return };
        if *at == mediator {
            if taken {
                self.commit(cid, path, entry);
            }
        } else {
            // Sent to a mediator that has since been replaced.
            let msg = Msg::Write { collab: cid.to_string(), path: path.to_string(), entry };
            self.send_collab(cid, at, &mediator, msg);
        }
    }

    // ---- sensations ----

    pub(crate) fn emit_sensation(
        &mut self,
        observer: &HolonId,
        kind: &str,
        payload: BTreeMap<String, Value>,
        source: SensationSource,
    ) {
        self.next_sensation += 1;
        let now = self.now();
        let s = Sensation { id: self.next_sensation, source, observer: observer.clone(), kind: kind.to_string(), payload, timestamp: now };
        let mut ev = TraceEvent::new(now, TraceKind::SensationEmitted)
            .with("id", s.id)
            .with("kind", kind)
            .with("observer", observer)
            .with("source", &s.source);
        for (k, v) in &s.payload {
            let key = if ["id", "kind", "observer", "source"].contains(&k.as_str()) { format!("payload.{k}") } else { k.clone() };
            ev = ev.with(&key, v);
        }
        self.record(ev);
        let ids: Vec<String> = self
            .collabs
            .iter()
            .filter(|(_, rt)| rt.state.as_ref().is_some_and(|c| c.is_participant(observer)))
            .map(|(id, _)| id.clone())
            .collect();
        for cid in ids {
            self.delivered(&cid, observer, &s, "local", 0);
            let mediator = self.mediator_of(&cid).expect("formed");
            if mediator == *observer {
                self.mediator_sensation(&cid, s.clone());
            } else {
                let msg = Msg::Sensation { collab: cid.clone(), sensation: s.clone() };
                self.send_collab(&cid, observer, &mediator, msg);
            }
        }
    }

    fn delivered(&mut self, cid: &str, holon: &HolonId, s: &Sensation, route: &str, latency: Tick) {
        self.record(
            TraceEvent::new(self.now(), TraceKind::SensationDelivered)
                .with("collab", cid)
                .with("holon", holon)
                .with("id", s.id)
                .with("kind", &s.kind)
                .with("latency", latency)
                .with("route", route),
        );
    }

    fn receive_sensation(&mut self, cid: &str, at: &HolonId, s: Sensation, route: &str, latency: Tick) {
        let Some(mediator) = self.mediator_of(cid) else { return };
        let first_at_mediator = *at == mediator && !self.collabs[cid].seen.contains(&s.id);
        if *at == mediator && !first_at_mediator {
            return;
        }
        self.delivered(cid, at, &s, route, latency);
        if first_at_mediator {
            self.mediator_sensation(cid, s);
        }
    }

    /// The mediator logs a sensation, maps it into shared state, forwards it
    /// to every other collaborator and re-runs membership rules.
    fn mediator_sensation(&mut self, cid: &str, s: Sensation) {
        let now = self.now();
        let rt = self.collabs.get_mut(cid).expect("exists");
        if !rt.seen.insert(s.id) {
            return;
        }
        rt.events.push(LoggedEvent { kind: s.kind.clone(), at: now });
        let mapping = rt.spec.on_sensation.get(&s.kind).cloned().unwrap_or_default();
        let c = rt.state.as_ref().expect("formed");
        let mediator = c.mediator.clone();
        let composition = c.composition.clone();
        let targets: Vec<HolonId> = c.participants.iter().filter(|p| **p != mediator && **p != s.observer).cloned().collect();
        for (path, field) in mapping {
            if let Some(v) = s.payload.get(&field) {
                self.mediator_write(cid, &path, v.clone());
            }
        }
        for p in targets {
            let msg = Msg::Sensation { collab: cid.to_string(), sensation: s.clone() };
            self.send_collab(cid, &mediator, &p, msg);
        }
        self.triggers_dirty = true;
        if self.hcfw.composition(&composition).is_some_and(|r| !r.rules.is_empty()) {
            if let Ok(actions) = self.hcfw.evaluate_membership_rules(&self.registry, now, &composition, Some(&s)) {
                for id in actions.iter().flat_map(|a| a.proposals.clone()) {
                    self.open_vote(&id);
                }
                self.flush_protocol();
            }
        }
    }

    // ---- positions ----

    pub(crate) fn position(&self, holon: &HolonId, resource: &str) -> Location {
        self.positions
            .get(&(holon.clone(), resource.to_string()))
            .copied()
            .unwrap_or_else(|| self.registry.get(holon).map(|h| h.base).unwrap_or(Location::new(0.0, 0.0)))
    }

    pub(crate) fn set_position(&mut self, holon: &HolonId, resource: &str, at: Location) {
        self.positions.insert((holon.clone(), resource.to_string()), at);
    }

    /// Ticks to travel from the resource's position to `to` at its speed.
    pub(crate) fn travel_ticks(&self, holon: &HolonId, resource: &str, to: &Location) -> Tick {
        let distance = self.position(holon, resource).distance(to);
        let speed = self.registry.get(holon).ok().and_then(|h| h.resource(resource)).map_or(1.0, |r| r.speed);
        if distance <= 1e-12 || speed <= 0.0 {
            0
        } else {
            (distance / speed - 1e-9).ceil().max(0.0) as Tick
        }
    }

    // ---- end of run ----

    fn snapshot(&mut self) {
        let now = self.now();
        let mut events = Vec::new();
        for (cid, rt) in &self.collabs {
            let Some(c) = &rt.state else { continue };
            for (holon, replica) in &c.replicas {
                events.push(
                    TraceEvent::new(now, TraceKind::StateSnapshot)
                        .with("collab", cid)
                        .with("holon", holon)
                        .with("mediator", *holon == c.mediator)
                        .with("state", replica.snapshot()),
                );
            }
        }
        for e in events {
            self.record(e);
        }
    }

    fn check_invariants(&mut self, capped: bool) {
        let mut problems = Vec::new();
        for record in self.hcfw.compositions() {
            let holders = self.hcfw.crypto().holders(record.composition_secret);
            if holders != record.members {
                problems.push(format!(
                    "secret of {} held by [{}], members are [{}]",
                    record.composition_id,
                    join(&holders),
                    join(&record.members)
                ));
            }
        }
        let mut engaged: BTreeMap<(HolonId, String), u64> = BTreeMap::new();
        for inst in self.instances.values().filter(|i| i.status.is_live()) {
            for (_, h, r) in &inst.binding.0 {
                if let Some(other) = engaged.insert((h.clone(), r.clone()), inst.id) {
                    problems.push(format!("{h}.{r} bound by instances {other} and {}", inst.id));
                }
            }
        }
        if !capped && self.net.pending_count() == 0 {
            for (cid, rt) in &self.collabs {
                if rt.state.as_ref().is_some_and(|c| !c.converged()) {
                    problems.push(format!("collaboration {cid} did not converge"));
                }
            }
        }
        for p in problems {
            self.violation(p);
        }
    }

    fn finish(mut self, capped: bool) -> RunReport {
        self.snapshot();
        self.check_invariants(capped);
        let end = self.now();
        RunReport {
            violations: self.violations,
            setup_end: self.setup_end,
            end,
            capped,
            stats: self.stats,
            decisions: self.net.decisions().to_vec(),
            trace: self.net.into_trace(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::from_str;

    const BASE: &str = r#"{
        "trusted_entity": "TE",
        "holons": [
            {"id": "M", "scores": {"connectivity": 0.9}, "resources": [
                {"name": "truck", "capabilities": [{"name": "pump", "attributes": {"fuelCost": 1}}]}
            ]},
            {"id": "A", "scores": {"connectivity": 0.5}, "resources": [{"name": "van", "capabilities": [{"name": "pump", "attributes": {"fuelCost": 2}}]}]},
            {"id": "B", "scores": {"connectivity": 0.4}}
        ],
        "compositions": [{"id": "S", "initiator": "M", "candidates": ["M", "A", "B"]}],
        "collaborations": [{"id": "c", "composition": "S", "policy": {"connectivity": 1},
            "on_sensation": {"Alarm": {"alarm": "level"}},
            "behaviours": [{"name": "pumpOut", "trigger": "alarm is \"high\" and p has pump", "roles": ["p"],
                "body": [{"invoke": {"role": "p", "capability": "pump", "duration": 5}}]}]}],
        "injections": [{"at": 1, "observer": "M", "kind": "Alarm", "payload": {"level": "high"}}],
        "options": {"reelection_timeout": 5, "until": 200}
    }"#;

    fn run(extra: &str) -> RunReport {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        let e: serde_json::Value = serde_json::from_str(extra).unwrap();
        for (k, x) in e.as_object().unwrap() {
            v[k] = x.clone();
        }
        World::run(&from_str(&v.to_string()).unwrap(), &RunOptions::default())
    }

    fn kinds(r: &RunReport, kind: TraceKind) -> Vec<&TraceEvent> {
        r.trace.of_kind(kind).collect()
    }

    #[test]
    fn cheapest_resource_runs_to_completion() {
        let r = run("{}");
        assert_eq!(r.exit_code(), 0, "{:?}", r.violations);
        let bound = kinds(&r, TraceKind::RoleBound);
        assert_eq!(bound.len(), 1);
        assert_eq!(bound[0].attr("resource"), Some("truck"));
        assert_eq!(kinds(&r, TraceKind::InstanceCompleted).len(), 1);
    }

    #[test]
    fn mediator_isolation_triggers_reelection() {
        let r = run(r#"{"injections": [], "link_schedule": [
            {"at": 1, "a": "M", "b": "A", "quality": "down"},
            {"at": 1, "a": "M", "b": "B", "quality": "down"}
        ]}"#);
        let sel = kinds(&r, TraceKind::MediatorSelected);
        assert_eq!(sel.len(), 2);
        assert_eq!(sel[1].attr("mediator"), Some("A"));
        assert_eq!(sel[1].attr("reason"), Some("reelection"));
        assert_eq!(sel[1].tick, r.setup_end + 1 + 5);
    }

    #[test]
    fn restored_link_cancels_reelection() {
        let r = run(r#"{"injections": [], "link_schedule": [
            {"at": 1, "a": "M", "b": "A", "quality": "down"},
            {"at": 1, "a": "M", "b": "B", "quality": "down"},
            {"at": 3, "a": "M", "b": "B", "quality": "good"}
        ]}"#);
        assert_eq!(kinds(&r, TraceKind::MediatorSelected).len(), 1);
    }

    #[test]
    fn deferred_trigger_fires_once_capability_returns() {
        let r = run(r#"{"availability_schedule": [
            {"at": 0, "holon": "M", "capability": "pump"},
            {"at": 0, "holon": "A", "capability": "pump"},
            {"at": 4, "holon": "A", "capability": "pump", "available": true}
        ]}"#);
        let deferred = kinds(&r, TraceKind::TriggerDeferred);
        assert_eq!(deferred.len(), 1);
        assert_eq!(deferred[0].attr("missing"), Some("p"));
        let bound = kinds(&r, TraceKind::RoleBound);
        assert_eq!(bound.len(), 1);
        assert_eq!(bound[0].attr("holon"), Some("A"));
        assert_eq!(bound[0].tick, r.setup_end + 4);
    }

    #[test]
    fn removal_aborts_running_instance() {
        let r = run(r#"{"availability_schedule": [{"at": 3, "holon": "M", "capability": "truck.pump", "remove": true}]}"#);
        let aborted = kinds(&r, TraceKind::InstanceAborted);
        assert_eq!(aborted.len(), 1);
        assert!(kinds(&r, TraceKind::InstanceCompleted).is_empty());
        assert_eq!(r.exit_code(), 0, "{:?}", r.violations);
    }

    #[test]
    fn suspended_instance_holds_its_resource() {
        let r = run(r#"{"availability_schedule": [
            {"at": 2, "holon": "M", "capability": "pump"},
            {"at": 9, "holon": "M", "capability": "pump", "available": true}
        ]}"#);
        let s = kinds(&r, TraceKind::InstanceSuspended);
        let res = kinds(&r, TraceKind::InstanceResumed);
        assert_eq!((s.len(), res.len()), (1, 1));
        assert_eq!(s[0].attr("pc"), res[0].attr("pc"));
        assert_eq!(kinds(&r, TraceKind::RoleBound).len(), 1);
        let done = kinds(&r, TraceKind::InstanceCompleted)[0].tick;
        // 5 ticks of work, 7 of them frozen.
        assert_eq!(done, r.setup_end + 1 + 5 + 7);
    }

    #[test]
    fn cap_reports_exit_two() {
        let r = run(r#"{"options": {"until": 3}}"#);
        assert!(r.capped);
        assert_eq!(r.exit_code(), 2);
    }

    #[test]
    fn replicas_converge_and_secret_matches_members() {
        let r = run("{}");
        let snaps: Vec<_> = kinds(&r, TraceKind::StateSnapshot).into_iter().map(|e| e.attr("state").unwrap().to_string()).collect();
        assert_eq!(snaps.len(), 3);
        assert!(snaps.windows(2).all(|w| w[0] == w[1]));
        assert!(r.violations.is_empty());
    }
}
