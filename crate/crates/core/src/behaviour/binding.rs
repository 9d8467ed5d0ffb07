use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::RoleSpec;
use crate::holon::{HolonId, HolonRegistry, ResourceStatus};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BindCandidate {
    pub holon: HolonId,
    pub resource: String,
    pub cost: f64,
}

impl BindCandidate {
    fn key(&self) -> (&HolonId, &str) {
        (&self.holon, &self.resource)
    }
}

/// Role name to bound resource, in role declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleBinding(pub Vec<(String, HolonId, String)>);

impl RoleBinding {
    pub fn get(&self, role: &str) -> Option<(&HolonId, &str)> {
        self.0.iter().find(|(r, _, _)| r == role).map(|(_, h, res)| (h, res.as_str()))
    }

    pub fn roles(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(r, _, _)| r.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insufficient {
    /// Roles with no eligible resource, or every role when candidates exist
    /// but cannot be assigned to distinct resources.
    pub missing: Vec<String>,
}

/// Idle resources of `participants` satisfying every predicate of `role`,
/// sorted by (holon, resource).
pub fn eligible(registry: &HolonRegistry, participants: &BTreeSet<HolonId>, role: &RoleSpec) -> Vec<BindCandidate> {
    let mut out = Vec::new();
    for holon in registry.iter().filter(|h| participants.contains(&h.id)) {
        for res in &holon.resources {
            if res.status == ResourceStatus::Idle && role.predicates.iter().all(|p| p.matches(res)) {
                out.push(BindCandidate { holon: holon.id.clone(), resource: res.name.clone(), cost: res.fuel_cost() });
            }
        }
    }
    out.sort_by(|a, b| a.key().cmp(&b.key()));
    out
}

/// Cheapest assignment of distinct candidates, one per role. Among equally
/// cheap assignments the lexicographically smallest (holon, resource)
/// sequence wins. Each inner list must be sorted by (holon, resource).
pub fn cheapest_assignment(candidates: &[Vec<BindCandidate>]) -> Option<Vec<usize>> {
    struct Search<'a> {
        candidates: &'a [Vec<BindCandidate>],
        /// `suffix_min[i]`: sum of the cheapest candidate of roles `i..`.
        suffix_min: Vec<f64>,
        current: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn used(&self, c: &BindCandidate) -> bool {
            self.current.iter().enumerate().any(|(role, &i)| self.candidates[role][i].key() == c.key())
        }

        fn go(&mut self, role: usize, cost: f64) {
            if let Some((best, _)) = &self.best {
                if cost + self.suffix_min[role] >= best - EPS {
                    return;
                }
            }
            if role == self.candidates.len() {
                self.best = Some((cost, self.current.clone()));
                return;
            }
            for i in 0..self.candidates[role].len() {
                let c = &self.candidates[role][i];
                if self.used(c) {
                    continue;
                }
                let next = cost + c.cost;
                self.current.push(i);
                self.go(role + 1, next);
                self.current.pop();
            }
        }
    }

    if candidates.iter().any(Vec::is_empty) {
        return None;
    }
    let mut suffix_min = vec![0.0; candidates.len() + 1];
    for i in (0..candidates.len()).rev() {
        let min = candidates[i].iter().map(|c| c.cost).min_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        suffix_min[i] = suffix_min[i + 1] + min.unwrap_or(0.0);
    }
    let mut search = Search { candidates, suffix_min, current: Vec::new(), best: None };
    search.go(0, 0.0);
    search.best.map(|(_, pick)| pick)
}

pub fn bind_roles(
    registry: &HolonRegistry,
    participants: &BTreeSet<HolonId>,
    roles: &[RoleSpec],
) -> Result<RoleBinding, Insufficient> {
    let candidates: Vec<Vec<BindCandidate>> = roles.iter().map(|r| eligible(registry, participants, r)).collect();
    match cheapest_assignment(&candidates) {
        Some(pick) => Ok(RoleBinding(
            roles
                .iter()
                .zip(pick)
                .enumerate()
                .map(|(i, (r, p))| {
                    let c = &candidates[i][p];
                    (r.name.clone(), c.holon.clone(), c.resource.clone())
                })
                .collect(),
        )),
        None => {
            let empty: Vec<String> =
                roles.iter().zip(&candidates).filter(|(_, c)| c.is_empty()).map(|(r, _)| r.name.clone()).collect();
            let missing = if empty.is_empty() { roles.iter().map(|r| r.name.clone()).collect() } else { empty };
            Err(Insufficient { missing })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::holon::{CapabilityPredicate, HolonDescriptor, ResourceDescriptor};
    use crate::value::Value;
    use proptest::prelude::*;

    fn cand(h: &str, r: &str, cost: f64) -> BindCandidate {
        BindCandidate { holon: HolonId::new(h), resource: r.to_string(), cost }
    }

    /// Exhaustive reference: every injective pick, cheapest then lexicographic.
    fn brute(candidates: &[Vec<BindCandidate>]) -> Option<Vec<usize>> {
        let mut best: Option<(f64, Vec<(HolonId, String)>, Vec<usize>)> = None;
        let mut idx = vec![0usize; candidates.len()];
        if candidates.iter().any(Vec::is_empty) {
            return None;
        }
        loop {
            let picks: Vec<&BindCandidate> = idx.iter().enumerate().map(|(r, &i)| &candidates[r][i]).collect();
            let keys: Vec<(HolonId, String)> = picks.iter().map(|c| (c.holon.clone(), c.resource.clone())).collect();
            let distinct = keys.iter().collect::<BTreeSet<_>>().len() == keys.len();
            if distinct {
                let cost: f64 = picks.iter().map(|c| c.cost).sum();
                let better = match &best {
                    None => true,
                    Some((bc, bk, _)) => cost < bc - EPS || ((cost - bc).abs() <= EPS && keys < *bk),
                };
                if better {
                    best = Some((cost, keys, idx.clone()));
                }
            }
            let mut pos = candidates.len();
            loop {
                if pos == 0 {
                    return best.map(|(_, _, i)| i);
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < candidates[pos].len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }

    #[test]
    fn prefers_cheapest_then_smallest_id() {
        let roles = vec![
            vec![cand("A", "x", 3.0), cand("B", "y", 1.0)],
            vec![cand("A", "x", 3.0), cand("B", "y", 1.0), cand("C", "z", 1.0)],
        ];
        assert_eq!(cheapest_assignment(&roles), Some(vec![1, 2]));
        let tie = vec![vec![cand("B", "y", 1.0), cand("C", "z", 1.0)], vec![cand("B", "y", 1.0), cand("C", "z", 1.0)]];
        assert_eq!(cheapest_assignment(&tie), Some(vec![0, 1]));
        let clash = vec![vec![cand("A", "x", 1.0)], vec![cand("A", "x", 1.0)]];
        assert_eq!(cheapest_assignment(&clash), None);
    }

    #[test]
    fn binds_against_registry() {
        let mut reg = HolonRegistry::new();
        reg.register(
            &HolonDescriptor::new("C2")
                .with_resource(
                    ResourceDescriptor::new("plane")
                        .with_capability("waterTank", &[("waterLevel", Value::str("full")), ("fuelCost", Value::Int(1))]),
                )
                .with_resource(
                    ResourceDescriptor::new("heli")
                        .with_capability("waterTank", &[("waterLevel", Value::str("full")), ("fuelCost", Value::Int(3))]),
                ),
        )
        .unwrap();
        let parts: BTreeSet<HolonId> = [HolonId::new("C2")].into();
        let full = CapabilityPredicate::attribute("waterLevel", crate::dsl::CmpOp::Is, Value::str("full"));
        let roles = vec![RoleSpec::new("carrier", vec![CapabilityPredicate::has("waterTank"), full.clone()])];
        let b = bind_roles(&reg, &parts, &roles).unwrap();
        assert_eq!(b.get("carrier"), Some((&HolonId::new("C2"), "plane")));

        reg.engage(&HolonId::new("C2"), "plane", 7).unwrap();
        let b = bind_roles(&reg, &parts, &roles).unwrap();
        assert_eq!(b.get("carrier"), Some((&HolonId::new("C2"), "heli")));

        let two = vec![roles[0].clone(), RoleSpec::new("other", vec![CapabilityPredicate::has("waterTank")])];
        assert_eq!(
            bind_roles(&reg, &parts, &two),
            Err(Insufficient { missing: vec!["carrier".into(), "other".into()] })
        );
        let medic = vec![RoleSpec::new("medic", vec![CapabilityPredicate::has("firstAid")])];
        assert_eq!(bind_roles(&reg, &parts, &medic), Err(Insufficient { missing: vec!["medic".into()] }));
    }

    fn arb_candidates() -> impl Strategy<Value = Vec<Vec<BindCandidate>>> {
        let pool: Vec<(&str, &str)> = vec![("A", "r1"), ("A", "r2"), ("B", "r1"), ("C", "r1"), ("C", "r3"), ("D", "r1")];
        let costs = prop::collection::vec(0u8..4, pool.len());
        (costs, prop::collection::vec(prop::collection::vec(any::<bool>(), pool.len()), 1..=5)).prop_map(
            move |(costs, masks)| {
                masks
                    .into_iter()
                    .map(|mask| {
                        pool.iter()
                            .zip(&costs)
                            .zip(mask)
                            .filter(|(_, keep)| *keep)
                            .map(|(((h, r), c), _)| cand(h, r, *c as f64))
                            .collect()
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn matches_exhaustive_search(c in arb_candidates()) {
            prop_assert_eq!(cheapest_assignment(&c), brute(&c));
        }
    }
}
