//! Holons, their resources and capabilities, versioned local state, and sensations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::CmpOp;
use crate::simnet::Tick;
use crate::value::{Location, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HolonError {
    #[error("holon id must be non-empty")]
    EmptyId,
    #[error("holon `{0}` is already registered")]
    DuplicateId(HolonId),
    #[error("unknown holon `{0}`")]
    UnknownHolon(HolonId),
    #[error("holon `{holon}` has no capability `{capability}`")]
    UnknownCapability { holon: HolonId, capability: String },
    #[error("holon `{holon}` has no resource `{resource}`")]
    UnknownResource { holon: HolonId, resource: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HolonId(String);

impl HolonId {
    pub fn new(id: impl Into<String>) -> Self {
        HolonId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for HolonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for HolonId {
    fn from(s: &str) -> Self {
        HolonId::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    pub name: String,
    /// Name of the resource exposing this capability.
    pub provided_by: String,
    pub available: bool,
    pub attributes: BTreeMap<String, Value>,
}

impl Capability {
    pub fn attribute(&self, name: &str) -> Option<&Value> {
        self.attributes.get(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceStatus {
    Idle,
    Engaged,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub name: String,
    pub capabilities: Vec<Capability>,
    pub status: ResourceStatus,
    /// Behaviour instance currently holding this resource.
    pub engaged_by: Option<u64>,
    /// Travel speed in location units per tick.
    pub speed: f64,
}

impl Resource {
    pub fn capability(&self, name: &str) -> Option<&Capability> {
        self.capabilities.iter().find(|c| c.name == name)
    }

    pub fn has_available(&self, name: &str) -> bool {
        self.capability(name).is_some_and(|c| c.available)
    }

    /// First value of `name` found among the resource's capabilities, in declaration order.
    pub fn attribute(&self, name: &str) -> Option<&Value> {
        self.capabilities.iter().find_map(|c| c.attribute(name))
    }

    /// Binding preference: the smallest `fuelCost` across capabilities, zero when none is declared.
    pub fn fuel_cost(&self) -> f64 {
        self.capabilities
            .iter()
            .filter_map(|c| c.attribute("fuelCost").and_then(Value::as_f64))
            .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.min(c))))
            .unwrap_or(0.0)
    }
}

/// Versioned dotted-path map. Every mutation bumps the version; history is
/// retained so reads can be pinned to an earlier version.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HolonState {
    entries: BTreeMap<String, Value>,
    version: u64,
    history: Vec<(u64, String, Value)>,
}

impl HolonState {
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, path: &str) -> Value {
        self.entries.get(path).cloned().unwrap_or(Value::Null)
    }

    /// Value at `path` as of `version`, ignoring all later writes.
    pub fn get_at(&self, path: &str, version: u64) -> Value {
        self.history
            .iter()
            .rev()
            .find(|(v, p, _)| *v <= version && p == path)
            .map(|(_, _, value)| value.clone())
            .unwrap_or(Value::Null)
    }

    pub fn set(&mut self, path: impl Into<String>, value: Value) -> u64 {
        let path = path.into();
        self.version += 1;
        self.history.push((self.version, path.clone(), value.clone()));
        self.entries.insert(path, value);
        self.version
    }

    pub fn entries(&self) -> &BTreeMap<String, Value> {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensationSource {
    Holon(HolonId),
    External,
}

impl fmt::Display for SensationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensationSource::Holon(h) => write!(f, "{h}"),
            SensationSource::External => f.write_str("external"),
        }
    }
}

/// An observed input from the outside world, broadcast by the observing holon.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensation {
    pub id: u64,
    pub source: SensationSource,
    /// The holon that observed the sensation and broadcasts it.
    pub observer: HolonId,
    pub kind: String,
    pub payload: BTreeMap<String, Value>,
    pub timestamp: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityDescriptor {
    pub name: String,
    #[serde(default = "default_true")]
    pub available: bool,
    #[serde(default)]
    pub attributes: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceDescriptor {
    pub name: String,
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default)]
    pub capabilities: Vec<CapabilityDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolonDescriptor {
    pub id: HolonId,
    #[serde(default)]
    pub resources: Vec<ResourceDescriptor>,
    /// Mediator-selection criterion scores in `[0, 1]`.
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub base: Option<Location>,
    #[serde(default)]
    pub state: BTreeMap<String, Value>,
    /// Vote cast when asked to join or change a composition.
    #[serde(default = "default_true")]
    pub accepts_proposals: bool,
}

fn default_true() -> bool {
    true
}

fn default_speed() -> f64 {
    1.0
}

impl HolonDescriptor {
    pub fn new(id: impl Into<HolonId>) -> Self {
        HolonDescriptor {
            id: id.into(),
            resources: Vec::new(),
            scores: BTreeMap::new(),
            base: None,
            state: BTreeMap::new(),
            accepts_proposals: true,
        }
    }

    pub fn with_resource(mut self, resource: ResourceDescriptor) -> Self {
        self.resources.push(resource);
        self
    }

    pub fn with_score(mut self, criterion: &str, score: f64) -> Self {
        self.scores.insert(criterion.to_string(), score);
        self
    }
}

impl ResourceDescriptor {
    pub fn new(name: &str) -> Self {
        ResourceDescriptor { name: name.to_string(), speed: 1.0, capabilities: Vec::new() }
    }

    pub fn with_capability(mut self, name: &str, attributes: &[(&str, Value)]) -> Self {
        self.capabilities.push(CapabilityDescriptor {
            name: name.to_string(),
            available: true,
            attributes: attributes.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        });
        self
    }

    pub fn with_speed(mut self, speed: f64) -> Self {
        self.speed = speed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Holon {
    pub id: HolonId,
    pub resources: Vec<Resource>,
    pub state: HolonState,
    pub scores: BTreeMap<String, f64>,
    pub base: Location,
    pub accepts_proposals: bool,
    /// Members, when this holon stands for a composition.
    pub members: Option<Vec<HolonId>>,
}

impl Holon {
    pub fn resource(&self, name: &str) -> Option<&Resource> {
        self.resources.iter().find(|r| r.name == name)
    }

    pub fn resource_mut(&mut self, name: &str) -> Option<&mut Resource> {
        self.resources.iter_mut().find(|r| r.name == name)
    }

    pub fn is_composition(&self) -> bool {
        self.members.is_some()
    }
}

/// Requirement on a resource: a capability it must offer (and have
/// available), or a constraint on one of its capability attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CapabilityPredicate {
    Has { has: String },
    Attribute { attribute: String, op: CmpOp, value: Value },
}

impl CapabilityPredicate {
    pub fn has(capability: &str) -> Self {
        CapabilityPredicate::Has { has: capability.to_string() }
    }

    pub fn attribute(name: &str, op: CmpOp, value: Value) -> Self {
        CapabilityPredicate::Attribute { attribute: name.to_string(), op, value }
    }

    pub fn matches(&self, resource: &Resource) -> bool {
        match self {
            CapabilityPredicate::Has { has } => resource.has_available(has),
            CapabilityPredicate::Attribute { attribute, op, value } => {
                let actual = resource.attribute(attribute).cloned().unwrap_or(Value::Null);
                crate::dsl::compare(*op, &actual, value)
            }
        }
    }

    /// True when any resource of the holon satisfies the predicate.
    pub fn matches_holon(&self, holon: &Holon) -> bool {
        holon.resources.iter().any(|r| self.matches(r))
    }
}

impl fmt::Display for CapabilityPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CapabilityPredicate::Has { has } => write!(f, "has {has}"),
            CapabilityPredicate::Attribute { attribute, op, value } => {
                write!(f, "{attribute} {} {}", op.symbol(), value.to_literal())
            }
        }
    }
}

/// One flipped availability flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapabilityChange {
    pub holon: HolonId,
    pub resource: String,
    pub capability: String,
    pub available: bool,
}

#[derive(Debug, Clone, Default)]
pub struct HolonRegistry {
    holons: BTreeMap<HolonId, Holon>,
}

impl HolonRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, descriptor: &HolonDescriptor) -> Result<HolonId, HolonError> {
        if descriptor.id.as_str().is_empty() {
            return Err(HolonError::EmptyId);
        }
        if self.holons.contains_key(&descriptor.id) {
            return Err(HolonError::DuplicateId(descriptor.id.clone()));
        }
        let resources = descriptor
            .resources
            .iter()
            .map(|r| Resource {
                name: r.name.clone(),
                capabilities: r
                    .capabilities
                    .iter()
                    .map(|c| Capability {
                        name: c.name.clone(),
                        provided_by: r.name.clone(),
                        available: c.available,
                        attributes: c.attributes.clone(),
                    })
                    .collect(),
                status: ResourceStatus::Idle,
                engaged_by: None,
                speed: r.speed,
            })
            .collect();
        // Seeding the initial state must not count as mutations: version starts at 0.
        let mut state = HolonState::default();
        for (path, value) in &descriptor.state {
            state.entries.insert(path.clone(), value.clone());
            state.history.push((0, path.clone(), value.clone()));
        }
        let holon = Holon {
            id: descriptor.id.clone(),
            resources,
            state,
            scores: descriptor.scores.clone(),
            base: descriptor.base.unwrap_or(Location::new(0.0, 0.0)),
            accepts_proposals: descriptor.accepts_proposals,
            members: None,
        };
        self.holons.insert(descriptor.id.clone(), holon);
        Ok(descriptor.id.clone())
    }

    /// Registers a composition as a holon in its own right.
    pub fn register_composition(
        &mut self,
        id: &HolonId,
        members: Vec<HolonId>,
    ) -> Result<HolonId, HolonError> {
        let mut descriptor = HolonDescriptor::new(id.clone());
        descriptor.accepts_proposals = true;
        self.register(&descriptor)?;
        if let Some(h) = self.holons.get_mut(id) {
            h.members = Some(members);
        }
        Ok(id.clone())
    }

    pub fn update_composition_members(&mut self, id: &HolonId, members: Vec<HolonId>) {
        if let Some(h) = self.holons.get_mut(id) {
            h.members = Some(members);
        }
    }

    pub fn contains(&self, id: &HolonId) -> bool {
        self.holons.contains_key(id)
    }

    pub fn get(&self, id: &HolonId) -> Result<&Holon, HolonError> {
        self.holons.get(id).ok_or_else(|| HolonError::UnknownHolon(id.clone()))
    }

    pub fn get_mut(&mut self, id: &HolonId) -> Result<&mut Holon, HolonError> {
        self.holons.get_mut(id).ok_or_else(|| HolonError::UnknownHolon(id.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Holon> {
        self.holons.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &HolonId> {
        self.holons.keys()
    }

    /// Sets availability of `capability` on `holon`.
    ///
    /// `capability` is either `resource.capability` or a bare capability name,
    /// in which case every resource exposing it is affected. Returns only the
    /// flags that actually flipped, so repeating a call is a silent no-op.
    pub fn set_capability_available(
        &mut self,
        holon: &HolonId,
        capability: &str,
        available: bool,
    ) -> Result<Vec<CapabilityChange>, HolonError> {
        let h = self.get_mut(holon)?;
        let (resource_filter, cap_name) = match capability.split_once('.') {
            Some((r, c)) => (Some(r), c),
            None => (None, capability),
        };
        let mut found = false;
        let mut changes = Vec::new();
        for resource in h.resources.iter_mut() {
            if resource_filter.is_some_and(|r| r != resource.name) {
                continue;
            }
            for cap in resource.capabilities.iter_mut().filter(|c| c.name == cap_name) {
                found = true;
                if cap.available != available {
                    cap.available = available;
                    changes.push(CapabilityChange {
                        holon: holon.clone(),
                        resource: resource.name.clone(),
                        capability: cap.name.clone(),
                        available,
                    });
                }
            }
        }
        if !found {
            return Err(HolonError::UnknownCapability {
                holon: holon.clone(),
                capability: capability.to_string(),
            });
        }
        Ok(changes)
    }

    /// Removes a capability outright (as opposed to marking it unavailable).
    pub fn remove_capability(&mut self, holon: &HolonId, capability: &str) -> Result<Vec<CapabilityChange>, HolonError> {
        let h = self.get_mut(holon)?;
        let (resource_filter, cap_name) = match capability.split_once('.') {
            Some((r, c)) => (Some(r), c),
            None => (None, capability),
        };
        let mut removed = Vec::new();
        for resource in h.resources.iter_mut() {
            if resource_filter.is_some_and(|r| r != resource.name) {
                continue;
            }
            let before = resource.capabilities.len();
            resource.capabilities.retain(|c| c.name != cap_name);
            if resource.capabilities.len() != before {
                removed.push(CapabilityChange {
                    holon: holon.clone(),
                    resource: resource.name.clone(),
                    capability: cap_name.to_string(),
                    available: false,
                });
            }
        }
        if removed.is_empty() {
            return Err(HolonError::UnknownCapability { holon: holon.clone(), capability: capability.to_string() });
        }
        Ok(removed)
    }

    pub fn read_state(&self, holon: &HolonId, path: &str) -> Result<Value, HolonError> {
        Ok(self.get(holon)?.state.get(path))
    }

    pub fn read_state_at(&self, holon: &HolonId, path: &str, version: u64) -> Result<Value, HolonError> {
        Ok(self.get(holon)?.state.get_at(path, version))
    }

    pub fn write_state(&mut self, holon: &HolonId, path: &str, value: Value) -> Result<u64, HolonError> {
        Ok(self.get_mut(holon)?.state.set(path, value))
    }

    pub fn engage(&mut self, holon: &HolonId, resource: &str, instance: u64) -> Result<(), HolonError> {
        let r = self.resource_mut(holon, resource)?;
        r.status = ResourceStatus::Engaged;
        r.engaged_by = Some(instance);
        Ok(())
    }

    pub fn release(&mut self, holon: &HolonId, resource: &str, instance: u64) -> Result<(), HolonError> {
        let r = self.resource_mut(holon, resource)?;
        if r.engaged_by == Some(instance) {
            r.status = ResourceStatus::Idle;
            r.engaged_by = None;
        }
        Ok(())
    }

    pub fn resource_mut(&mut self, holon: &HolonId, resource: &str) -> Result<&mut Resource, HolonError> {
        let h = self.get_mut(holon)?;
        h.resource_mut(resource).ok_or_else(|| HolonError::UnknownResource {
            holon: holon.clone(),
            resource: resource.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c2() -> HolonDescriptor {
        HolonDescriptor::new("C2")
            .with_resource(ResourceDescriptor::new("searchPlane").with_capability("search", &[]))
            .with_resource(ResourceDescriptor::new("rescueHelicopter").with_capability("airlift", &[]))
            .with_resource(ResourceDescriptor::new("MAV").with_capability("relay", &[]))
    }

    #[test]
    fn register_and_duplicate() {
        let mut reg = HolonRegistry::new();
        assert_eq!(reg.register(&c2()).unwrap(), HolonId::new("C2"));
        assert_eq!(reg.get(&"C2".into()).unwrap().resources.len(), 3);
        assert_eq!(reg.get(&"C2".into()).unwrap().state.version(), 0);
        assert_eq!(reg.register(&HolonDescriptor::new("H1")).unwrap(), HolonId::new("H1"));
        assert_eq!(reg.register(&c2()), Err(HolonError::DuplicateId("C2".into())));
        assert_eq!(reg.register(&HolonDescriptor::new("")), Err(HolonError::EmptyId));
    }

    #[test]
    fn capability_availability_is_idempotent() {
        let mut reg = HolonRegistry::new();
        reg.register(&c2()).unwrap();
        let id = HolonId::new("C2");
        let changes = reg.set_capability_available(&id, "searchPlane.search", false).unwrap();
        assert_eq!(changes.len(), 1);
        assert!(reg.set_capability_available(&id, "search", false).unwrap().is_empty());
        assert!(matches!(
            reg.set_capability_available(&id, "teleport", false),
            Err(HolonError::UnknownCapability { .. })
        ));
    }

    #[test]
    fn state_reads() {
        let mut reg = HolonRegistry::new();
        reg.register(&c2()).unwrap();
        let id = HolonId::new("C2");
        assert_eq!(reg.read_state(&id, "mav.deployed").unwrap(), Value::Null);
        let v1 = reg.write_state(&id, "loc", Value::loc(1.0, 2.0)).unwrap();
        assert_eq!(reg.read_state(&id, "loc").unwrap(), Value::loc(1.0, 2.0));
        let v2 = reg.write_state(&id, "loc", Value::loc(3.0, 4.0)).unwrap();
        assert!(v2 > v1);
        assert_eq!(reg.read_state_at(&id, "loc", v1).unwrap(), Value::loc(1.0, 2.0));
        assert_eq!(reg.read_state_at(&id, "loc", v2).unwrap(), Value::loc(3.0, 4.0));
        assert!(matches!(reg.read_state(&"X".into(), "a"), Err(HolonError::UnknownHolon(_))));
    }

    #[test]
    fn fuel_cost_prefers_minimum() {
        let r = ResourceDescriptor::new("p")
            .with_capability("a", &[("fuelCost", Value::Int(3))])
            .with_capability("b", &[("fuelCost", Value::Decimal(1.5))]);
        let mut reg = HolonRegistry::new();
        reg.register(&HolonDescriptor::new("X").with_resource(r)).unwrap();
        let res = &reg.get(&"X".into()).unwrap().resources[0];
        assert_eq!(res.fuel_cost(), 1.5);
    }
}
