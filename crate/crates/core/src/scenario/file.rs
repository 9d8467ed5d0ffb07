use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value as Json;
use thiserror::Error;

use crate::behaviour::{BehaviourDef, BehaviourError, BehaviourSpec};
use crate::collaboration::MediatorPolicy;
use crate::dsl;
use crate::hcfw::{RuleAction, VotingConfig};
use crate::holon::{CapabilityPredicate, HolonDescriptor};
use crate::simnet::{LinkQuality, NetConfig, Tick};
use crate::value::Value;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{location}: unresolved reference to {kind} `{name}`")]
    UnresolvedReference { location: String, kind: &'static str, name: String },
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
}

/// Every problem found while loading, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioErrors(pub Vec<ScenarioError>);

impl fmt::Display for ScenarioErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioErrors {}

impl From<ScenarioError> for ScenarioErrors {
    fn from(e: ScenarioError) -> Self {
        ScenarioErrors(vec![e])
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    #[serde(default = "good")]
    pub quality: LinkQuality,
    #[serde(default)]
    pub delay: Option<Tick>,
    #[serde(default)]
    pub drop: Option<f64>,
}

fn good() -> LinkQuality {
    LinkQuality::Good
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub condition: String,
    pub action: RuleAction,
    pub target: CapabilityPredicate,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionSpec {
    pub id: String,
    pub initiator: String,
    pub candidates: Vec<String>,
    #[serde(default)]
    pub voting: VotingConfig,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollaborationSpec {
    pub id: String,
    pub composition: String,
    /// Defaults to every member of the composition.
    #[serde(default)]
    pub participants: Option<Vec<String>>,
    #[serde(default)]
    pub policy: MediatorPolicy,
    /// Initial shared state.
    #[serde(default)]
    pub shared: BTreeMap<String, Value>,
    /// Per sensation kind: shared path written by the mediator, from payload field.
    #[serde(default)]
    pub on_sensation: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    pub behaviours: Vec<BehaviourSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    /// Ticks after setup completes.
    pub at: Tick,
    #[serde(default)]
    pub observer: Option<String>,
    pub kind: String,
    #[serde(default)]
    pub payload: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEventSpec {
    pub at: Tick,
    pub a: String,
    pub b: String,
    pub quality: LinkQuality,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvailabilitySpec {
    pub at: Tick,
    pub holon: String,
    /// `resource.capability` or a bare capability name.
    pub capability: String,
    #[serde(default)]
    pub available: bool,
    /// Removes the capability instead of toggling it.
    #[serde(default)]
    pub remove: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeOptions {
    /// Holon that observes injections with no explicit observer.
    pub default_observer: Option<String>,
    /// Ticks the mediator may stay cut off from every collaborator before re-election.
    pub reelection_timeout: Tick,
    /// Periodic shared-state snapshots, every this many ticks after setup.
    pub snapshot_interval: Option<Tick>,
    /// Video frames streamed from the field node once a relay is deployed.
    pub video_frames: u32,
    /// Default duration cap.
    pub until: Option<Tick>,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        RuntimeOptions { default_observer: None, reelection_timeout: 20, snapshot_interval: None, video_frames: 3, until: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub trusted_entity: String,
    /// Node standing for the on-site teams; relays are deployed towards it.
    #[serde(default)]
    pub field_node: Option<String>,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    pub holons: Vec<HolonDescriptor>,
    #[serde(default)]
    pub compositions: Vec<CompositionSpec>,
    #[serde(default)]
    pub collaborations: Vec<CollaborationSpec>,
    #[serde(default)]
    pub injections: Vec<InjectionSpec>,
    #[serde(default)]
    pub link_schedule: Vec<LinkEventSpec>,
    #[serde(default)]
    pub availability_schedule: Vec<AvailabilitySpec>,
    #[serde(default)]
    pub options: RuntimeOptions,
}

/// A loaded and validated scenario with compiled behaviours.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    /// Compiled behaviours per collaboration id.
    pub behaviours: BTreeMap<String, Vec<BehaviourDef>>,
    pub source: Option<PathBuf>,
}

fn merge(base: &mut Json, over: Json) {
    match (base, over) {
        (Json::Object(b), Json::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_json(path: &Path, depth: usize) -> Result<Json, ScenarioError> {
    let shown = path.display().to_string();
    if depth > 8 {
        return Err(ScenarioError::Invalid { location: shown, message: "`extends` chain too deep".into() });
    }
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io { path: shown.clone(), message: e.to_string() })?;
    let mut doc = parse_json(&shown, &text)?;
    let Some(obj) = doc.as_object_mut() else {
        return Err(ScenarioError::Invalid { location: shown, message: "scenario must be a JSON object".into() });
    };
    match obj.remove("extends") {
        None => Ok(doc),
        Some(Json::String(parent)) => {
            let parent_path = path.parent().unwrap_or(Path::new(".")).join(parent);
            let mut base = read_json(&parent_path, depth + 1)?;
            merge(&mut base, doc);
            Ok(base)
        }
        Some(_) => Err(ScenarioError::Invalid { location: shown, message: "`extends` must be a path".into() }),
    }
}

fn parse_json(path: &str, text: &str) -> Result<Json, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        path: path.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Reads a scenario file, resolving `extends` (deep merge, arrays replaced).
pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioErrors> {
    let path = path.as_ref();
    let doc = read_json(path, 0)?;
    let shown = path.display().to_string();
    let file: ScenarioFile = serde_json::from_value(doc)
        .map_err(|e| ScenarioError::Parse { path: shown, line: 0, column: 0, message: e.to_string() })?;
    let mut scenario = validate(file)?;
    scenario.source = Some(path.to_path_buf());
    Ok(scenario)
}

pub fn from_str(text: &str) -> Result<Scenario, ScenarioErrors> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        path: "<input>".into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate(file)
}

pub fn validate(file: ScenarioFile) -> Result<Scenario, ScenarioErrors> {
    let mut errors = Vec::new();
    let mut holons = BTreeSet::new();
    for (i, h) in file.holons.iter().enumerate() {
        if h.id.as_str().is_empty() {
            errors.push(ScenarioError::Invalid { location: format!("holons[{i}]"), message: "empty holon id".into() });
        } else if !holons.insert(h.id.as_str().to_string()) {
            errors.push(ScenarioError::Invalid {
                location: format!("holons[{i}]"),
                message: format!("duplicate holon id `{}`", h.id),
            });
        }
        for (criterion, score) in &h.scores {
            if !(0.0..=1.0).contains(score) {
                errors.push(ScenarioError::Invalid {
                    location: format!("holons[{i}].scores.{criterion}"),
                    message: format!("score {score} outside [0, 1]"),
                });
            }
        }
    }
    let mut nodes = holons.clone();
    if holons.contains(&file.trusted_entity) {
        errors.push(ScenarioError::Invalid {
            location: "trusted_entity".into(),
            message: "the trusted entity must not also be a holon".into(),
        });
    }
    nodes.insert(file.trusted_entity.clone());
    if let Some(f) = &file.field_node {
        nodes.insert(f.clone());
    }
    if !(0.0..1.0).contains(&file.net.weak_drop) || !(0.0..1.0).contains(&file.net.default_drop) {
        errors.push(ScenarioError::Invalid { location: "net".into(), message: "drop probabilities must lie in [0, 1)".into() });
    }

    let unresolved = |errors: &mut Vec<ScenarioError>, location: String, kind: &'static str, name: &str| {
        errors.push(ScenarioError::UnresolvedReference { location, kind, name: name.to_string() });
    };

    for (i, l) in file.links.iter().enumerate() {
        for end in [&l.a, &l.b] {
            if !nodes.contains(end) {
                unresolved(&mut errors, format!("links[{i}]"), "node", end);
            }
        }
        if l.drop.is_some_and(|d| !(0.0..1.0).contains(&d)) {
            errors.push(ScenarioError::Invalid { location: format!("links[{i}].drop"), message: "must lie in [0, 1)".into() });
        }
    }

    let mut compositions: BTreeMap<&str, &CompositionSpec> = BTreeMap::new();
    for (i, c) in file.compositions.iter().enumerate() {
        let loc = format!("compositions[{i}]");
        if compositions.insert(&c.id, c).is_some() || holons.contains(&c.id) {
            errors.push(ScenarioError::Invalid { location: loc.clone(), message: format!("id `{}` already in use", c.id) });
        }
        for cand in c.candidates.iter().chain([&c.initiator]) {
            if !holons.contains(cand) {
                unresolved(&mut errors, loc.clone(), "holon", cand);
            }
        }
        if !c.candidates.contains(&c.initiator) {
            errors.push(ScenarioError::Invalid { location: loc.clone(), message: "initiator must be a candidate".into() });
        }
        if let Err(e) = c.voting.validate() {
            errors.push(ScenarioError::Invalid { location: format!("{loc}.voting"), message: e.to_string() });
        }
        for (j, r) in c.rules.iter().enumerate() {
            if let Err(e) = dsl::parse(&r.condition) {
                errors.push(ScenarioError::Invalid { location: format!("{loc}.rules[{j}]"), message: e.to_string() });
            }
        }
    }

    let mut behaviours = BTreeMap::new();
    let mut collab_ids = BTreeSet::new();
    for (i, c) in file.collaborations.iter().enumerate() {
        let loc = format!("collaborations[{i}]");
        if !collab_ids.insert(c.id.clone()) {
            errors.push(ScenarioError::Invalid { location: loc.clone(), message: format!("duplicate collaboration `{}`", c.id) });
        }
        match compositions.get(c.composition.as_str()) {
            None => unresolved(&mut errors, loc.clone(), "composition", &c.composition),
            Some(comp) => {
                for p in c.participants.iter().flatten() {
                    if !holons.contains(p) {
                        unresolved(&mut errors, loc.clone(), "holon", p);
                    } else if !comp.candidates.contains(p) {
                        errors.push(ScenarioError::Invalid {
                            location: loc.clone(),
                            message: format!("participant `{p}` is not a candidate of `{}`", c.composition),
                        });
                    }
                }
            }
        }
        if c.participants.as_ref().is_some_and(Vec::is_empty) {
            errors.push(ScenarioError::Invalid { location: loc.clone(), message: "participants must not be empty".into() });
        }
        let mut names = BTreeSet::new();
        let mut defs = Vec::new();
        for (j, b) in c.behaviours.iter().enumerate() {
            let bloc = format!("{loc}.behaviours[{j}]");
            if !names.insert(b.name.clone()) {
                errors.push(ScenarioError::Invalid { location: bloc.clone(), message: format!("duplicate behaviour `{}`", b.name) });
            }
            match BehaviourDef::from_spec(b) {
                Ok(d) => defs.push(d),
                Err(BehaviourError::UnresolvedRole { role, .. }) => unresolved(&mut errors, bloc, "role", &role),
                Err(e) => errors.push(ScenarioError::Invalid { location: bloc, message: e.to_string() }),
            }
        }
        behaviours.insert(c.id.clone(), defs);
    }

    if let Some(o) = &file.options.default_observer {
        if !holons.contains(o) {
            unresolved(&mut errors, "options.default_observer".into(), "holon", o);
        }
    }
    let mut last = 0;
    for (i, inj) in file.injections.iter().enumerate() {
        let loc = format!("injections[{i}]");
        if inj.at < last {
            errors.push(ScenarioError::Invalid { location: loc.clone(), message: "injections must be sorted by tick".into() });
        }
        last = inj.at;
        match inj.observer.as_ref().or(file.options.default_observer.as_ref()) {
            Some(o) if !holons.contains(o) => unresolved(&mut errors, loc, "holon", o),
            Some(_) => {}
            None => errors.push(ScenarioError::Invalid { location: loc, message: "no observer and no default observer".into() }),
        }
    }
    let mut last = 0;
    for (i, l) in file.link_schedule.iter().enumerate() {
        let loc = format!("link_schedule[{i}]");
        if l.at < last {
            errors.push(ScenarioError::Invalid { location: loc.clone(), message: "link_schedule must be sorted by tick".into() });
        }
        last = l.at;
        for end in [&l.a, &l.b] {
            if !nodes.contains(end) {
                unresolved(&mut errors, loc.clone(), "node", end);
            }
        }
    }
    let mut last = 0;
    for (i, a) in file.availability_schedule.iter().enumerate() {
        let loc = format!("availability_schedule[{i}]");
        if a.at < last {
            errors.push(ScenarioError::Invalid {
                location: loc.clone(),
                message: "availability_schedule must be sorted by tick".into(),
            });
        }
        last = a.at;
        match file.holons.iter().find(|h| h.id.as_str() == a.holon) {
            None => unresolved(&mut errors, loc, "holon", &a.holon),
            Some(h) => {
                let (res, cap) = match a.capability.split_once('.') {
                    Some((r, c)) => (Some(r), c),
                    None => (None, a.capability.as_str()),
                };
                let found = h
                    .resources
                    .iter()
                    .filter(|r| res.is_none_or(|n| n == r.name))
                    .any(|r| r.capabilities.iter().any(|c| c.name == cap));
                if !found {
                    unresolved(&mut errors, loc, "capability", &a.capability);
                }
            }
        }
    }

    if errors.is_empty() {
        Ok(Scenario { file, behaviours, source: None })
    } else {
        Err(ScenarioErrors(errors))
    }
}

impl Scenario {
    pub fn behaviour_count(&self) -> usize {
        self.behaviours.values().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "trusted_entity": "TE",
        "holons": [{"id": "A", "resources": [{"name": "r", "capabilities": [{"name": "x"}]}]}],
        "compositions": [{"id": "S", "initiator": "A", "candidates": ["A"]}],
        "collaborations": [{"id": "c", "composition": "S", "behaviours": [
            {"name": "b", "trigger": "go is true", "roles": [{"name": "w", "requires": [{"has": "x"}]}], "body": ["alert(w)"]}
        ]}]
    }"#;

    #[test]
    fn minimal_loads() {
        let s = from_str(MINIMAL).unwrap();
        assert_eq!(s.behaviour_count(), 1);
        assert_eq!(s.file.options.reelection_timeout, 20);
    }

    #[test]
    fn undeclared_role_is_unresolved() {
        let bad = MINIMAL.replace("alert(w)", "alert(medic)");
        let err = from_str(&bad).unwrap_err();
        assert!(matches!(&err.0[0], ScenarioError::UnresolvedReference { kind: "role", name, .. } if name == "medic"));
    }

    #[test]
    fn reports_every_problem() {
        let bad = MINIMAL.replace(r#""candidates": ["A"]"#, r#""candidates": ["A", "Z"]"#).replace(r#""composition": "S""#, r#""composition": "Q""#);
        let err = from_str(&bad).unwrap_err();
        assert_eq!(err.0.len(), 2, "{err}");
    }

    #[test]
    fn syntax_error_has_position() {
        let err = from_str("{\n  \"holons\": [,]\n}").unwrap_err();
        assert!(matches!(err.0[0], ScenarioError::Parse { line: 2, .. }));
    }

    #[test]
    fn extends_merges_objects_and_replaces_arrays() {
        let mut base: Json = serde_json::json!({"a": {"x": 1, "y": 2}, "l": [1, 2]});
        merge(&mut base, serde_json::json!({"a": {"y": 3}, "l": [9]}));
        assert_eq!(base, serde_json::json!({"a": {"x": 1, "y": 3}, "l": [9]}));
    }
}
