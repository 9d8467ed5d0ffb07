//! Deterministic discrete-event network and virtual clock.
//!
//! Every inter-holon message travels as an [`Envelope`] through [`SimNet`].
//! Events are processed in `(tick, sequence)` order; all randomness (jitter
//! and drop decisions) comes from one seeded stream consumed in event order,
//! so a run is a pure function of its inputs and seed.
//!
//! Drops are modeled as lost transmissions that the sender retransmits after
//! `retransmit_after` ticks, so loss shows up as latency rather than missing
//! messages. Envelopes on a link that goes down are pulled out of flight and
//! held until the link is restored, then resent in their original send order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::SecretId;
use crate::trace::{Trace, TraceEvent, TraceKind};

pub type Tick = u64;
pub type NodeId = String;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("drop probability {0} outside [0, 1)")]
    BadDropProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkQuality {
    Good,
    Weak,
    Down,
}

impl LinkQuality {
    pub fn as_str(&self) -> &'static str {
        match self {
            LinkQuality::Good => "good",
            LinkQuality::Weak => "weak",
            LinkQuality::Down => "down",
        }
    }
}

impl fmt::Display for LinkQuality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LinkQuality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "good" => Ok(LinkQuality::Good),
            "weak" => Ok(LinkQuality::Weak),
            "down" => Ok(LinkQuality::Down),
            other => Err(format!("unknown link quality `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Delay of a good link unless overridden per link.
    pub default_delay: Tick,
    pub default_drop: f64,
    pub weak_delay_factor: Tick,
    pub weak_drop: f64,
    /// Uniform jitter drawn from `0..=max_jitter` per transmission.
    pub max_jitter: Tick,
    pub retransmit_after: Tick,
    /// Extra delay added by a relay node on an upgraded link.
    pub relay_hop_delay: Tick,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            default_delay: 1,
            default_drop: 0.0,
            weak_delay_factor: 5,
            weak_drop: 0.3,
            max_jitter: 0,
            retransmit_after: 2,
            relay_hop_delay: 1,
        }
    }
}

/// Symmetric link between two nodes; stored once per unordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub endpoints: (NodeId, NodeId),
    pub quality: LinkQuality,
    pub base_delay: Tick,
    pub drop_probability: f64,
    pub relay: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Route {
    Direct(LinkQuality),
    Relay(NodeId),
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Route::Direct(q) => write!(f, "direct-{q}"),
            Route::Relay(_) => f.write_str("relay"),
        }
    }
}

/// Transmission parameters currently in effect on a link.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteParams {
    pub delay: Tick,
    pub drop_probability: f64,
    pub route: Route,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<M> {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: M,
    pub send_time: Tick,
    pub deliver_time: Tick,
    pub sealed_under: Option<SecretId>,
    pub route: Route,
    /// Transmission attempts, including the successful one.
    pub attempts: u32,
}

/// A seeded decision, kept so replays can be compared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub envelope: u64,
    pub attempt: u32,
    pub jitter: Tick,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event<M> {
    Deliver(Envelope<M>),
    Timer { node: NodeId, payload: M },
}

#[derive(Debug, Clone)]
enum Scheduled<M> {
    Deliver(Envelope<M>),
    Timer { node: NodeId, payload: M },
    DropNotice { envelope: u64, src: NodeId, dst: NodeId, attempt: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkChange {
    pub a: NodeId,
    pub b: NodeId,
    pub previous: LinkQuality,
    pub quality: LinkQuality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunLimit {
    Quiescence,
    Until(Tick),
}

fn key(a: &str, b: &str) -> (NodeId, NodeId) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

pub struct SimNet<M> {
    now: Tick,
    seq: u64,
    config: NetConfig,
    nodes: BTreeSet<NodeId>,
    links: BTreeMap<(NodeId, NodeId), Link>,
    queue: BTreeMap<(Tick, u64), Scheduled<M>>,
    pending: BTreeMap<(NodeId, NodeId), Vec<Envelope<M>>>,
    channel_last: BTreeMap<(NodeId, NodeId), Tick>,
    rng: ChaCha8Rng,
    decisions: Vec<Decision>,
    trace: Trace,
}

impl<M: Clone> SimNet<M> {
    pub fn new(seed: u64, config: NetConfig) -> Self {
        SimNet {
            now: 0,
            seq: 0,
            config,
            nodes: BTreeSet::new(),
            links: BTreeMap::new(),
            queue: BTreeMap::new(),
            pending: BTreeMap::new(),
            channel_last: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            decisions: Vec::new(),
            trace: Trace::new(),
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn add_node(&mut self, node: impl Into<NodeId>) {
        self.nodes.insert(node.into());
    }

    pub fn has_node(&self, node: &str) -> bool {
        self.nodes.contains(node)
    }

    fn check(&self, node: &str) -> Result<(), NetError> {
        if self.nodes.contains(node) {
            Ok(())
        } else {
            Err(NetError::UnknownNode(node.to_string()))
        }
    }

    /// The link between `a` and `b`, defaulted from the config when never configured.
    pub fn link(&self, a: &str, b: &str) -> Link {
        let k = key(a, b);
        self.links.get(&k).cloned().unwrap_or(Link {
            endpoints: k,
            quality: LinkQuality::Good,
            base_delay: self.config.default_delay,
            drop_probability: self.config.default_drop,
            relay: None,
        })
    }

    fn link_mut(&mut self, a: &str, b: &str) -> &mut Link {
        let link = self.link(a, b);
        self.links.entry(key(a, b)).or_insert(link)
    }

    pub fn configure_link(
        &mut self,
        a: &str,
        b: &str,
        base_delay: Tick,
        drop_probability: f64,
    ) -> Result<(), NetError> {
        self.check(a)?;
        self.check(b)?;
        if !(0.0..1.0).contains(&drop_probability) {
            return Err(NetError::BadDropProbability(drop_probability));
        }
        let link = self.link_mut(a, b);
        link.base_delay = base_delay;
        link.drop_probability = drop_probability;
        Ok(())
    }

    /// Changes link quality. Returns `None` when the quality is unchanged.
    ///
    /// Taking a link down pulls every in-flight envelope on it into the
    /// pending queue; bringing it back resends the pending queue in send order.
    pub fn set_link(&mut self, a: &str, b: &str, quality: LinkQuality) -> Result<Option<LinkChange>, NetError> {
        self.check(a)?;
        self.check(b)?;
        let link = self.link_mut(a, b);
        let previous = link.quality;
        if previous == quality {
            return Ok(None);
        }
        link.quality = quality;
        let (ka, kb) = link.endpoints.clone();
        self.trace.push(
            TraceEvent::new(self.now, TraceKind::LinkChanged)
                .with("a", &ka)
                .with("b", &kb)
                .with("previous", previous)
                .with("quality", quality),
        );
        if quality == LinkQuality::Down {
            self.hold_in_flight(&ka, &kb);
        } else if previous == LinkQuality::Down {
            self.flush_pending(&ka, &kb);
        }
        Ok(Some(LinkChange { a: ka, b: kb, previous, quality }))
    }

    /// Inserts (or removes) a relay node on a link. While present, a non-down
    /// link routes at good-link parameters plus one relay hop.
    pub fn set_relay(&mut self, a: &str, b: &str, relay: Option<NodeId>) -> Result<(), NetError> {
        self.check(a)?;
        self.check(b)?;
        if let Some(r) = &relay {
            self.check(r)?;
        }
        self.link_mut(a, b).relay = relay;
        Ok(())
    }

    /// Parameters a transmission on `(a, b)` would use now; `None` if the link is down.
    pub fn effective(&self, a: &str, b: &str) -> Option<RouteParams> {
        let link = self.link(a, b);
        match (link.quality, &link.relay) {
            (LinkQuality::Down, _) => None,
            (_, Some(relay)) => Some(RouteParams {
                delay: link.base_delay + self.config.relay_hop_delay,
                drop_probability: link.drop_probability,
                route: Route::Relay(relay.clone()),
            }),
            (LinkQuality::Good, None) => Some(RouteParams {
                delay: link.base_delay,
                drop_probability: link.drop_probability,
                route: Route::Direct(LinkQuality::Good),
            }),
            (LinkQuality::Weak, None) => Some(RouteParams {
                delay: link.base_delay * self.config.weak_delay_factor,
                drop_probability: self.config.weak_drop.max(link.drop_probability),
                route: Route::Direct(LinkQuality::Weak),
            }),
        }
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    pub fn send(&mut self, src: &str, dst: &str, payload: M, sealed_under: Option<SecretId>) -> Result<u64, NetError> {
        self.check(src)?;
        self.check(dst)?;
        let id = self.next_seq();
        let envelope = Envelope {
            id,
            src: src.to_string(),
            dst: dst.to_string(),
            payload,
            send_time: self.now,
            deliver_time: self.now,
            sealed_under,
            route: Route::Direct(LinkQuality::Good),
            attempts: 0,
        };
        self.transmit(envelope);
        Ok(id)
    }

    fn transmit(&mut self, mut envelope: Envelope<M>) {
        let Some(params) = self.effective(&envelope.src, &envelope.dst) else {
            self.pending.entry(key(&envelope.src, &envelope.dst)).or_default().push(envelope);
            return;
        };
        let mut at = self.now;
        let mut attempt = 0u32;
        let arrival = loop {
            attempt += 1;
            let jitter = if self.config.max_jitter > 0 { self.rng.gen_range(0..=self.config.max_jitter) } else { 0 };
            let dropped = params.drop_probability > 0.0 && self.rng.gen::<f64>() < params.drop_probability;
            self.decisions.push(Decision { envelope: envelope.id, attempt, jitter, dropped });
            let t = at + params.delay + jitter;
            // Bounded only as a guard; the expected number of attempts is 1 / (1 - p).
            if !dropped || attempt >= 10_000 {
                break t;
            }
            let seq = self.next_seq();
            self.queue.insert(
                (t, seq),
                Scheduled::DropNotice {
                    envelope: envelope.id,
                    src: envelope.src.clone(),
                    dst: envelope.dst.clone(),
                    attempt,
                },
            );
            at = t + self.config.retransmit_after;
        };
        let channel = (envelope.src.clone(), envelope.dst.clone());
        let deliver = arrival.max(self.channel_last.get(&channel).copied().unwrap_or(0));
        self.channel_last.insert(channel, deliver);
        envelope.deliver_time = deliver;
        envelope.route = params.route;
        envelope.attempts = attempt;
        self.queue.insert((deliver, envelope.id), Scheduled::Deliver(envelope));
    }

    fn on_link(src: &str, dst: &str, a: &str, b: &str) -> bool {
        (src == a && dst == b) || (src == b && dst == a)
    }

    fn hold_in_flight(&mut self, a: &str, b: &str) {
        let keys: Vec<(Tick, u64)> = self
            .queue
            .iter()
            .filter(|(_, s)| match s {
                Scheduled::Deliver(e) => Self::on_link(&e.src, &e.dst, a, b),
                Scheduled::DropNotice { src, dst, .. } => Self::on_link(src, dst, a, b),
                Scheduled::Timer { .. } => false,
            })
            .map(|(k, _)| *k)
            .collect();
        let pending = self.pending.entry(key(a, b)).or_default();
        for k in keys {
            if let Some(Scheduled::Deliver(e)) = self.queue.remove(&k) {
                pending.push(e);
            }
        }
        pending.sort_by_key(|e| e.id);
    }

    fn flush_pending(&mut self, a: &str, b: &str) {
        let mut held = self.pending.remove(&key(a, b)).unwrap_or_default();
        held.sort_by_key(|e| e.id);
        self.channel_last.retain(|(s, d), _| !Self::on_link(s, d, a, b));
        for e in held {
            self.transmit(e);
        }
    }

    /// Number of envelopes held on down links.
    pub fn pending_count(&self) -> usize {
        self.pending.values().map(Vec::len).sum()
    }

    pub fn schedule_timer(&mut self, node: &str, at: Tick, payload: M) {
        let seq = self.next_seq();
        self.queue.insert((at.max(self.now), seq), Scheduled::Timer { node: node.to_string(), payload });
    }

    pub fn is_quiescent(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn next_event_time(&self) -> Option<Tick> {
        self.queue.keys().next().map(|(t, _)| *t)
    }

    /// Pops the next event due no later than `limit`, advancing the clock.
    pub fn next(&mut self, limit: RunLimit) -> Option<Event<M>> {
        loop {
            let (&(t, seq), _) = self.queue.iter().next()?;
            if let RunLimit::Until(until) = limit {
                if t > until {
                    return None;
                }
            }
            let item = self.queue.remove(&(t, seq)).expect("key just observed");
            debug_assert!(t >= self.now);
            self.now = t;
            match item {
                Scheduled::Deliver(e) => return Some(Event::Deliver(e)),
                Scheduled::Timer { node, payload } => return Some(Event::Timer { node, payload }),
                Scheduled::DropNotice { envelope, src, dst, attempt } => {
                    self.trace.push(
                        TraceEvent::new(t, TraceKind::MessageDropped)
                            .with("attempt", attempt)
                            .with("dst", dst)
                            .with("msg", envelope)
                            .with("src", src),
                    );
                }
            }
        }
    }

    /// Advances the clock to `t` without processing anything; used at duration caps.
    pub fn advance_to(&mut self, t: Tick) {
        if t > self.now && self.next_event_time().is_none_or(|n| n >= t) {
            self.now = t;
        }
    }

    /// Drives the loop, handing each event to `handler`, and returns the trace
    /// events recorded during this call.
    pub fn run_until(&mut self, limit: RunLimit, mut handler: impl FnMut(&mut SimNet<M>, Event<M>)) -> Vec<TraceEvent> {
        let start = self.trace.len();
        while let Some(event) = self.next(limit) {
            handler(self, event);
        }
        self.trace.events()[start..].to_vec()
    }

    pub fn record(&mut self, event: TraceEvent) {
        self.trace.push(event);
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }
}
