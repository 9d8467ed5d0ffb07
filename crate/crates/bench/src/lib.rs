//! Fixtures shared by the benchmarks in `benches/`.

use std::path::PathBuf;

use holon_core::behaviour::BindCandidate;
use holon_core::holon::HolonId;
use holon_core::scenario::{self, Scenario};

pub fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scenario"));
    scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// `roles` candidate lists over `holons` holons with two resources each.
/// Costs are spread deterministically so no two assignments tie.
pub fn candidates(roles: usize, holons: usize) -> Vec<Vec<BindCandidate>> {
    (0..roles)
        .map(|r| {
            let mut list: Vec<BindCandidate> = (0..holons)
                .flat_map(|h| {
                    (0..2).map(move |k| BindCandidate {
                        holon: HolonId::new(format!("H{h:02}")),
                        resource: format!("r{k}"),
                        cost: ((h * 7 + k * 3 + r * 5) % 11) as f64 + 0.01 * h as f64,
                    })
                })
                .collect();
            list.sort_by(|a, b| (&a.holon, &a.resource).cmp(&(&b.holon, &b.resource)));
            list
        })
        .collect()
}
