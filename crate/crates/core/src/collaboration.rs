//! Collaborations: a mediator-led subset of a composition's members sharing
//! replicated state.
//!
//! Shared state is last-writer-wins per path, ordered by `(timestamp, writer)`
//! with Lamport timestamps. Writers stamp and apply locally, the mediator
//! applies and rebroadcasts; since the merge is commutative every replica
//! that has seen the same entries holds the same state.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hcfw::CompositionRecord;
use crate::holon::{HolonId, HolonRegistry};
use crate::value::Value;

pub const CRITERIA: [&str; 4] = ["connectivity", "compute", "battery", "capability_diversity"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollabError {
    #[error("collaboration needs at least one participant")]
    EmptyParticipants,
    #[error("`{holon}` is not a member of composition `{composition}`")]
    NotAMember { holon: HolonId, composition: HolonId },
    #[error("`{holon}` does not participate in `{collab}`")]
    NotAParticipant { holon: HolonId, collab: String },
    #[error("`{holon}` has no score for `{criterion}`")]
    MissingScore { holon: HolonId, criterion: String },
    #[error("invalid mediator policy: {0}")]
    InvalidPolicy(String),
    #[error("compositions of `{a}` and `{b}` have not been merged")]
    CompositionsNotMerged { a: String, b: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct MediatorPolicy {
    weights: BTreeMap<String, f64>,
}

impl Default for MediatorPolicy {
    fn default() -> Self {
        MediatorPolicy { weights: CRITERIA.iter().map(|c| (c.to_string(), 1.0)).collect() }
    }
}

impl TryFrom<BTreeMap<String, f64>> for MediatorPolicy {
    type Error = CollabError;

    fn try_from(weights: BTreeMap<String, f64>) -> Result<Self, Self::Error> {
        MediatorPolicy::new(weights)
    }
}

impl From<MediatorPolicy> for BTreeMap<String, f64> {
    fn from(p: MediatorPolicy) -> Self {
        p.weights
    }
}

impl MediatorPolicy {
    /// Criteria left out of `weights` get weight zero.
    pub fn new(mut weights: BTreeMap<String, f64>) -> Result<Self, CollabError> {
        for c in CRITERIA {
            weights.entry(c.to_string()).or_insert(0.0);
        }
        if let Some((k, w)) = weights.iter().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
            return Err(CollabError::InvalidPolicy(format!("weight for `{k}` is {w}")));
        }
        if !weights.values().any(|w| *w > 0.0) {
            return Err(CollabError::InvalidPolicy("no positive weight".into()));
        }
        Ok(MediatorPolicy { weights })
    }

    pub fn from_pairs(pairs: &[(&str, f64)]) -> Result<Self, CollabError> {
        Self::new(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    pub fn score(&self, holon: &HolonId, scores: &BTreeMap<String, f64>) -> Result<f64, CollabError> {
        let mut total = 0.0;
        for (criterion, w) in self.weights.iter().filter(|(_, w)| **w > 0.0) {
            let s = scores
                .get(criterion)
                .ok_or_else(|| CollabError::MissingScore { holon: holon.clone(), criterion: criterion.clone() })?;
            total += w * s;
        }
        Ok(total)
    }
}

/// Argmax of the weighted score sum; ties go to the smallest id. Sums within
/// a relative 1e-9 of each other count as tied.
pub fn select_mediator(
    candidates: &BTreeMap<HolonId, BTreeMap<String, f64>>,
    policy: &MediatorPolicy,
) -> Result<HolonId, CollabError> {
    let mut best: Option<(&HolonId, f64)> = None;
    for (id, scores) in candidates {
        let s = policy.score(id, scores)?;
        match best {
            None => best = Some((id, s)),
            Some((_, b)) if s > b && (s - b) > 1e-9 * s.abs().max(b.abs()) => best = Some((id, s)),
            _ => {}
        }
    }
    best.map(|(id, _)| id.clone()).ok_or(CollabError::EmptyParticipants)
}

fn scores_of<'a>(
    registry: &HolonRegistry,
    ids: impl IntoIterator<Item = &'a HolonId>,
) -> BTreeMap<HolonId, BTreeMap<String, f64>> {
    ids.into_iter()
        .map(|id| (id.clone(), registry.get(id).map(|h| h.scores.clone()).unwrap_or_default()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedEntry {
    pub value: Value,
    pub ts: u64,
    pub writer: HolonId,
}

impl SharedEntry {
    fn beats(&self, other: &SharedEntry) -> bool {
        (self.ts, &self.writer) > (other.ts, &other.writer)
    }
}

/// One participant's copy of the shared state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replica {
    entries: BTreeMap<String, SharedEntry>,
    clock: u64,
}

impl Replica {
    /// Last-writer-wins merge; returns whether the entry was taken.
    pub fn apply(&mut self, path: &str, entry: SharedEntry) -> bool {
        self.clock = self.clock.max(entry.ts);
        match self.entries.get(path) {
            Some(current) if !entry.beats(current) => false,
            _ => {
                self.entries.insert(path.to_string(), entry);
                true
            }
        }
    }

    pub fn stamp(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn get(&self, path: &str) -> Option<&SharedEntry> {
        self.entries.get(path)
    }

    pub fn entries(&self) -> &BTreeMap<String, SharedEntry> {
        &self.entries
    }

    pub fn values(&self) -> BTreeMap<String, Value> {
        self.entries.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect()
    }

    /// Canonical text form: `path=value@ts/writer` joined by `;`.
    pub fn snapshot(&self) -> String {
        self.entries
            .iter()
            .map(|(k, e)| format!("{k}={}@{}/{}", e.value.to_literal(), e.ts, e.writer))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collaboration {
    pub id: String,
    pub composition: HolonId,
    pub participants: BTreeSet<HolonId>,
    pub mediator: HolonId,
    pub policy: MediatorPolicy,
    pub replicas: BTreeMap<HolonId, Replica>,
    pub behaviours: Vec<String>,
    /// Collaborations folded into this one by linking.
    pub linked: Vec<String>,
}

impl Collaboration {
    /// Elects the mediator and seeds every replica with `initial` at timestamp 0.
    pub fn form(
        id: &str,
        composition: &CompositionRecord,
        participants: BTreeSet<HolonId>,
        policy: MediatorPolicy,
        registry: &HolonRegistry,
        initial: &BTreeMap<String, Value>,
        behaviours: Vec<String>,
    ) -> Result<Collaboration, CollabError> {
        if participants.is_empty() {
            return Err(CollabError::EmptyParticipants);
        }
        if let Some(outsider) = participants.iter().find(|p| !composition.members.contains(*p)) {
            return Err(CollabError::NotAMember {
                holon: outsider.clone(),
                composition: composition.composition_id.clone(),
            });
        }
        let mediator = select_mediator(&scores_of(registry, &participants), &policy)?;
        let mut seed = Replica::default();
        for (path, value) in initial {
            seed.apply(path, SharedEntry { value: value.clone(), ts: 0, writer: mediator.clone() });
        }
        let replicas = participants.iter().map(|p| (p.clone(), seed.clone())).collect();
        Ok(Collaboration {
            id: id.to_string(),
            composition: composition.composition_id.clone(),
            participants,
            mediator,
            policy,
            replicas,
            behaviours,
            linked: Vec::new(),
        })
    }

    pub fn is_participant(&self, holon: &HolonId) -> bool {
        self.participants.contains(holon)
    }

    fn require(&self, holon: &HolonId) -> Result<(), CollabError> {
        if self.is_participant(holon) {
            Ok(())
        } else {
            Err(CollabError::NotAParticipant { holon: holon.clone(), collab: self.id.clone() })
        }
    }

    pub fn replica(&self, holon: &HolonId) -> Option<&Replica> {
        self.replicas.get(holon)
    }

    pub fn mediator_state(&self) -> &Replica {
        &self.replicas[&self.mediator]
    }

    /// Stamps a write at the writer's replica and applies it there. The
    /// returned entry still has to reach the mediator.
    pub fn write_local(&mut self, writer: &HolonId, path: &str, value: Value) -> Result<SharedEntry, CollabError> {
        self.require(writer)?;
        let replica = self.replicas.get_mut(writer).expect("participants have replicas");
        let entry = SharedEntry { value, ts: replica.stamp(), writer: writer.clone() };
        replica.apply(path, entry.clone());
        Ok(entry)
    }

    /// Applies an incoming entry at `holon`'s replica.
    pub fn receive(&mut self, holon: &HolonId, path: &str, entry: SharedEntry) -> Result<bool, CollabError> {
        self.require(holon)?;
        Ok(self.replicas.get_mut(holon).expect("participants have replicas").apply(path, entry))
    }

    /// Participants that should get a rebroadcast from the mediator.
    pub fn fan_out(&self) -> Vec<HolonId> {
        self.participants.iter().filter(|p| **p != self.mediator).cloned().collect()
    }

    pub fn converged(&self) -> bool {
        let reference = self.mediator_state().snapshot();
        self.replicas.values().all(|r| r.snapshot() == reference)
    }

    /// Re-runs mediator selection over `reachable` participants.
    pub fn reselect(&mut self, registry: &HolonRegistry, reachable: &BTreeSet<HolonId>) -> Result<bool, CollabError> {
        let pool: BTreeSet<HolonId> = self.participants.intersection(reachable).cloned().collect();
        if pool.is_empty() {
            return Ok(false);
        }
        let next = select_mediator(&scores_of(registry, &pool), &self.policy)?;
        let changed = next != self.mediator;
        self.mediator = next;
        Ok(changed)
    }

    /// Folds `other` into `self` once both compositions have been merged
    /// into `merged`. Returns the union state the new mediator now holds,
    /// to be rebroadcast.
    pub fn link(
        &mut self,
        other: &Collaboration,
        merged: &CompositionRecord,
        registry: &HolonRegistry,
    ) -> Result<Vec<(String, SharedEntry)>, CollabError> {
        let parents: BTreeSet<&HolonId> = merged.parents.iter().collect();
        let covered = |c: &HolonId| parents.contains(c) || *c == merged.composition_id;
        if !(covered(&self.composition) && covered(&other.composition)) || merged.parents.is_empty() {
            return Err(CollabError::CompositionsNotMerged { a: self.id.clone(), b: other.id.clone() });
        }
        let mut union = self.mediator_state().clone();
        for (path, entry) in other.mediator_state().entries() {
            union.apply(path, entry.clone());
        }
        self.composition = merged.composition_id.clone();
        for p in &other.participants {
            self.participants.insert(p.clone());
            let theirs = other.replicas.get(p).cloned().unwrap_or_default();
            self.replicas
                .entry(p.clone())
                .and_modify(|mine| {
                    for (path, entry) in theirs.entries() {
                        mine.apply(path, entry.clone());
                    }
                })
                .or_insert(theirs);
        }
        for b in &other.behaviours {
            if !self.behaviours.contains(b) {
                self.behaviours.push(b.clone());
            }
        }
        self.linked.push(other.id.clone());
        self.linked.extend(other.linked.iter().cloned());
        self.mediator = select_mediator(&scores_of(registry, &self.participants), &self.policy)?;
        let mediator = self.mediator.clone();
        self.replicas.insert(mediator, union.clone());
        Ok(union.entries().iter().map(|(k, e)| (k.clone(), e.clone())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::SecretId;
    use crate::hcfw::VotingConfig;
    use crate::holon::HolonDescriptor;

    fn record(id: &str, members: &[&str]) -> CompositionRecord {
        CompositionRecord {
            composition_id: id.into(),
            members: members.iter().map(|m| HolonId::new(*m)).collect(),
            composition_secret: SecretId(1),
            retired_secrets: Vec::new(),
            rules: Vec::new(),
            behaviours: BTreeSet::new(),
            voting: VotingConfig::default(),
            parents: Vec::new(),
        }
    }

    fn registry() -> HolonRegistry {
        let mut reg = HolonRegistry::new();
        for (id, conn) in [("C2", 0.95), ("FireDpt", 0.6), ("HealthDpt", 0.5), ("PoliceDpt", 0.55)] {
            let d = HolonDescriptor::new(id)
                .with_score("connectivity", conn)
                .with_score("compute", 0.5)
                .with_score("battery", 0.5)
                .with_score("capability_diversity", 0.5);
            reg.register(&d).unwrap();
        }
        reg
    }

    fn ids(names: &[&str]) -> BTreeSet<HolonId> {
        names.iter().map(|n| HolonId::new(*n)).collect()
    }

    #[test]
    fn sar_mediator_is_c2() {
        let reg = registry();
        let sar = ["C2", "FireDpt", "HealthDpt", "PoliceDpt"];
        let policy = MediatorPolicy::from_pairs(&[("connectivity", 3.0), ("compute", 1.0)]).unwrap();
        let c = Collaboration::form("SAR", &record("X", &sar), ids(&sar), policy, &reg, &BTreeMap::new(), vec![]).unwrap();
        assert_eq!(c.mediator, HolonId::new("C2"));
    }

    #[test]
    fn form_errors() {
        let reg = registry();
        let rec = record("X", &["C2", "FireDpt"]);
        let p = MediatorPolicy::default();
        assert_eq!(
            Collaboration::form("c", &rec, BTreeSet::new(), p.clone(), &reg, &BTreeMap::new(), vec![]),
            Err(CollabError::EmptyParticipants)
        );
        assert!(matches!(
            Collaboration::form("c", &rec, ids(&["C2", "PoliceDpt"]), p.clone(), &reg, &BTreeMap::new(), vec![]),
            Err(CollabError::NotAMember { .. })
        ));
        let solo = Collaboration::form("c", &rec, ids(&["FireDpt"]), p, &reg, &BTreeMap::new(), vec![]).unwrap();
        assert_eq!(solo.mediator, HolonId::new("FireDpt"));
    }

    #[test]
    fn hand_computed_argmax() {
        let mut c = BTreeMap::new();
        let v = |a: f64| CRITERIA.iter().zip([a, 0.5, 0.5, 0.5]).map(|(k, s)| (k.to_string(), s)).collect();
        c.insert(HolonId::new("B"), v(0.5));
        c.insert(HolonId::new("A"), v(0.9));
        assert_eq!(select_mediator(&c, &MediatorPolicy::default()).unwrap(), HolonId::new("A"));
        c.insert(HolonId::new("A"), v(0.5));
        assert_eq!(select_mediator(&c, &MediatorPolicy::default()).unwrap(), HolonId::new("A"), "tie goes to smallest id");
        c.insert(HolonId::new("Z"), BTreeMap::new());
        assert!(matches!(select_mediator(&c, &MediatorPolicy::default()), Err(CollabError::MissingScore { .. })));
    }

    #[test]
    fn policy_needs_positive_weight() {
        assert!(MediatorPolicy::from_pairs(&[("battery", 0.0)]).is_err());
        assert!(MediatorPolicy::from_pairs(&[("battery", -1.0)]).is_err());
        let p: MediatorPolicy = serde_json::from_str(r#"{"battery": 2.0}"#).unwrap();
        assert_eq!(p.weights()["connectivity"], 0.0);
    }

    #[test]
    fn lww_same_timestamp_larger_writer_wins() {
        let mut a = Replica::default();
        let mut b = Replica::default();
        let e1 = SharedEntry { value: Value::str("x"), ts: 3, writer: "A".into() };
        let e2 = SharedEntry { value: Value::str("y"), ts: 3, writer: "B".into() };
        a.apply("p", e1.clone());
        a.apply("p", e2.clone());
        b.apply("p", e2);
        b.apply("p", e1);
        assert_eq!(a.snapshot(), b.snapshot());
        assert_eq!(a.get("p").unwrap().value, Value::str("y"));
    }

    #[test]
    fn non_participant_cannot_write() {
        let reg = registry();
        let rec = record("X", &["C2", "FireDpt", "HealthDpt"]);
        let mut c =
            Collaboration::form("c", &rec, ids(&["C2", "FireDpt"]), MediatorPolicy::default(), &reg, &BTreeMap::new(), vec![])
                .unwrap();
        assert!(matches!(
            c.write_local(&"HealthDpt".into(), "p", Value::Int(1)),
            Err(CollabError::NotAParticipant { .. })
        ));
        let e = c.write_local(&"FireDpt".into(), "p", Value::Int(1)).unwrap();
        assert_eq!(e.ts, 1);
        assert!(!c.converged());
        c.receive(&"C2".into(), "p", e).unwrap();
        assert!(c.converged());
    }

    #[test]
    fn link_requires_merge() {
        let reg = registry();
        let ra = record("A", &["C2", "HealthDpt"]);
        let rb = record("B", &["FireDpt", "PoliceDpt"]);
        let init_a: BTreeMap<String, Value> = [("sosCall".to_string(), Value::Null)].into();
        let init_b: BTreeMap<String, Value> = [("fireZone".to_string(), Value::str("north"))].into();
        let mut a = Collaboration::form("a", &ra, ra.members.clone(), MediatorPolicy::default(), &reg, &init_a, vec!["x".into()])
            .unwrap();
        let b = Collaboration::form("b", &rb, rb.members.clone(), MediatorPolicy::default(), &reg, &init_b, vec!["y".into()])
            .unwrap();
        let unrelated = record("M", &["C2", "HealthDpt", "FireDpt", "PoliceDpt"]);
        assert!(matches!(a.link(&b, &unrelated, &reg), Err(CollabError::CompositionsNotMerged { .. })));
        let mut merged = unrelated.clone();
        merged.parents = vec!["A".into(), "B".into()];
        let union = a.link(&b, &merged, &reg).unwrap();
        assert_eq!(union.len(), 2);
        assert_eq!(a.participants.len(), 4);
        assert_eq!(a.mediator, HolonId::new("C2"));
        assert_eq!(a.mediator_state().get("fireZone").unwrap().value, Value::str("north"));
        assert_eq!(a.behaviours, vec!["x".to_string(), "y".to_string()]);
    }
}
