//! Best-first enumeration, counting and drafting against brute-force
//! expansion of small token trees.

use std::collections::HashMap;

use proptest::prelude::*;
use speclimit_core::brw_tree::TokenTree;
use speclimit_core::drafting::draft_optimal;
use speclimit_core::{Family, FamilySpec};

/// Every node to `depth`, as (value, path, prob), sorted by value then path.
fn brute_nodes(family: &Family, depth: usize) -> Vec<(f64, Vec<u32>, f64)> {
    let mut all = vec![(0.0, Vec::new(), 1.0)];
    let mut layer = all.clone();
    for _ in 0..depth {
        let mut next = Vec::new();
        for (_, path, prob) in &layer {
            let dist = family.distribution_at(path);
            for (i, &b) in dist.p().probs().iter().enumerate() {
                let mut c = path.clone();
                c.push(i as u32);
                let p = prob * b;
                next.push((-p.ln(), c, p));
            }
        }
        all.extend(next.iter().cloned());
        layer = next;
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    all
}

fn family(spec: FamilySpec) -> Family {
    Family::from_spec(spec).unwrap()
}

/// Brute-force nodes to `depth` that are guaranteed to precede every deeper
/// node, and the value below which that guarantee holds: the smallest value
/// at depth + 1 bounds every node underneath it.
fn complete_prefix(family: &Family, depth: usize) -> (Vec<(f64, Vec<u32>, f64)>, f64) {
    let nodes = brute_nodes(family, depth + 1);
    let horizon = nodes
        .iter()
        .filter(|n| n.1.len() == depth + 1)
        .map(|n| n.0)
        .fold(f64::INFINITY, f64::min);
    (nodes, horizon)
}

fn check_against_brute(family: &Family, depth: usize) {
    let (brute, horizon) = complete_prefix(family, depth);
    let k = brute.iter().take_while(|n| n.0 < horizon - 1e-9).count();
    let fast = TokenTree::new(family).enumerate_lowest(k as u64, 1 << 20).unwrap();
    let by_path: HashMap<&[u32], (f64, f64)> = brute.iter().map(|n| (n.1.as_slice(), (n.0, n.2))).collect();
    for (i, (f, b)) in fast.iter().zip(&brute).enumerate() {
        assert!((f.value - b.0).abs() < 1e-12, "rank {i}: {} vs {}", f.value, b.0);
        // ties may break differently under rounding, so match each node by path
        let (value, prob) = by_path[f.path.as_slice()];
        assert!((f.value - value).abs() < 1e-12, "rank {i}: {:?}", f.path);
        assert!((f.prob - prob).abs() <= 1e-12 * prob, "rank {i}: {:?}", f.path);
    }
    // N(t) at a few thresholds below the horizon
    for frac in [0.0, 0.3, 0.6, 0.95] {
        let t = horizon * frac;
        let expected = brute.iter().filter(|n| n.0 <= t).count() as u64;
        assert_eq!(TokenTree::new(family).count_below(t, 1 << 20).value(), expected, "t={t}");
    }
    // the optimal tree is the top-P set
    for p in [1u64, 2, 3, 5, 8].into_iter().filter(|&p| (p as usize) <= k) {
        let want: f64 = brute[..p as usize].iter().map(|n| n.2).sum();
        let got = draft_optimal(family, p).unwrap().expected_accepted();
        assert!((got - want).abs() < 1e-12, "P={p}: {got} vs {want}");
    }
}

#[test]
fn two_point_family_matches_brute_force() {
    check_against_brute(&family(FamilySpec::fixed(&[0.7, 0.3])), 8);
}

#[test]
fn three_point_family_matches_brute_force() {
    check_against_brute(&family(FamilySpec::fixed(&[0.5, 0.3, 0.2])), 6);
}

#[test]
fn random_three_token_family_matches_brute_force() {
    for seed in 0..5 {
        check_against_brute(&family(FamilySpec::dirichlet(0.7, 3, seed)), 6);
    }
}

#[test]
fn spec_example_lowest_four() {
    let f = family(FamilySpec::fixed(&[0.7, 0.3]));
    let nodes = TokenTree::new(&f).enumerate_lowest(4, 100).unwrap();
    let paths: Vec<Vec<u32>> = nodes.iter().map(|n| n.path.clone()).collect();
    assert_eq!(paths, vec![vec![], vec![0], vec![0, 0], vec![0, 0, 0]]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fixed_families_match_brute_force(w in prop::collection::vec(0.05f64..1.0, 2..=3)) {
        let s: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / s).collect();
        let f = family(FamilySpec::fixed(&probs));
        check_against_brute(&f, 5);
    }

    #[test]
    fn dirichlet_families_match_brute_force(seed in 0u64..1000, alpha in 0.2f64..3.0) {
        let f = family(FamilySpec::dirichlet(alpha, 3, seed));
        check_against_brute(&f, 5);
    }
}
