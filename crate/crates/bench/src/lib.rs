//! Fixtures shared by the benchmarks.

use speclimit_core::{Family, FamilySpec};

/// Families the benchmarks draft over, with a short id for each.
pub fn families() -> Vec<(&'static str, Family)> {
    [
        ("fixed-0.7-0.3", FamilySpec::fixed(&[0.7, 0.3])),
        ("uniform-8", FamilySpec::uniform(8)),
        ("dirichlet-1-32", FamilySpec::dirichlet(1.0, 32, 7)),
        ("dirichlet-0.1-256", FamilySpec::dirichlet(0.1, 256, 7)),
    ]
    .into_iter()
    .map(|(id, spec)| (id, Family::from_spec(spec).expect("fixture family is valid")))
    .collect()
}

pub const CAPACITIES: [u64; 4] = [4, 64, 256, 1024];
