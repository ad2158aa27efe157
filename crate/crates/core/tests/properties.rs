use proptest::prelude::*;
use speclimit_core::bounds::{bound_ce_lower, bound_en_t, bound_exact, bound_limit};
use speclimit_core::brw_tree::TokenTree;
use speclimit_core::distfam::{family_moments, functionals};
use speclimit_core::drafting::draft_optimal;
use speclimit_core::moments::{estimate, normalize_record, IngestOptions, TraceRecord};
use speclimit_core::{Family, FamilySpec, MomentParams};

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / s).collect();
    p.sort_by(|a, b| b.total_cmp(a));
    p
}

fn params() -> impl Strategy<Value = MomentParams> {
    (0.05f64..3.0, 0.0f64..4.0).prop_map(|(mu, excess)| MomentParams::new(mu, mu * mu + excess))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn exact_bound_between_one_and_p(m in params(), extra in 0u64..100_000) {
        let p = m.threshold().ceil() as u64 + extra;
        let v = bound_exact(&m, p).unwrap().value.unwrap();
        prop_assert!(v >= 1.0 - 1e-12, "{v}");
        prop_assert!(v <= p as f64 + 1e-9, "{v} > {p}");
    }

    #[test]
    fn exact_bound_monotone_in_p(m in params(), extra in 0u64..10_000, step in 1u64..1000) {
        let p = m.threshold().ceil() as u64 + extra;
        let lo = bound_exact(&m, p).unwrap().value.unwrap();
        let hi = bound_exact(&m, p + step).unwrap().value.unwrap();
        prop_assert!(hi >= lo - 1e-12);
    }

    #[test]
    fn exact_bound_below_threshold_is_absent(m in params()) {
        let below = m.threshold().ceil() as u64 - 1;
        if (below as f64) < m.threshold() && below >= 1 {
            prop_assert!(bound_exact(&m, below).unwrap().value.is_none());
        }
    }

    #[test]
    fn exact_bound_slope_approaches_limit(m in params()) {
        // d/d ln P of a ln((P − b)/a) tends to a, and the limit slope is 1/μ ≤ a
        prop_assert!(m.slope() >= 1.0 / m.mu - 1e-12);
        let p = 1u64 << 40;
        let v = bound_exact(&m, p).unwrap().value.unwrap();
        prop_assert!(v >= bound_limit(&m, p).unwrap().value - 1e-9);
    }

    #[test]
    fn en_t_bound_increasing(m in params(), t in 0.0f64..10.0, dt in 0.0f64..5.0) {
        prop_assert!(bound_en_t(&m, t + dt).unwrap() >= bound_en_t(&m, t).unwrap());
        prop_assert!(bound_en_t(&m, t).unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn ce_bound_with_q_equal_p_is_limit(m in params(), p in 2u64..1_000_000) {
        let paired = m.clone().with_cross_entropy(m.mu, 0.0);
        let ce = bound_ce_lower(&paired, p).unwrap().value;
        prop_assert!((ce - bound_limit(&m, p).unwrap().value).abs() < 1e-12);
    }

    #[test]
    fn gibbs_cross_entropy_at_least_entropy(
        w in prop::collection::vec(0.01f64..1.0, 2..12),
        v in prop::collection::vec(0.01f64..1.0, 12),
    ) {
        let p = normalized(&w);
        let q = normalized(&v[..p.len()]);
        let f = functionals(&p, Some(&q));
        prop_assert!(f.cross_entropy.unwrap() >= f.entropy - 1e-12);
        prop_assert_eq!(f.q_zero_mass, Some(0.0));
    }

    #[test]
    fn estimate_is_order_invariant(
        recs in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 1..8), 1..30),
        rot in 0usize..30,
    ) {
        let records: Vec<TraceRecord> = recs
            .iter()
            .map(|w| TraceRecord { p: normalized(w), q: None, meta: None })
            .collect();
        let mut shuffled = records.clone();
        shuffled.reverse();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let a = estimate(&records).unwrap();
        let b = estimate(&shuffled).unwrap();
        prop_assert!((a.mu - b.mu).abs() <= 1e-12 * a.mu.max(1.0));
        prop_assert!((a.mu2 - b.mu2).abs() <= 1e-12 * a.mu2.max(1.0));
    }

    #[test]
    fn truncation_bias_is_bounded(w in prop::collection::vec(0.0001f64..1.0, 3..20), eps in 0.001f64..0.2) {
        let p = normalized(&w);
        let tail: f64 = p.iter().filter(|&&x| x < eps).map(|&x| x * (x.ln().abs() + 1.0)).sum();
        if p.iter().any(|&x| x >= eps) {
            let full = estimate(&[TraceRecord { p: p.clone(), q: None, meta: None }]).unwrap();
            let (cut, _) = normalize_record(
                TraceRecord { p: p.clone(), q: None, meta: None },
                &IngestOptions { min_prob: eps },
            ).unwrap();
            let trunc = estimate(&[cut]).unwrap();
            prop_assert!((full.mu - trunc.mu).abs() <= tail + 1e-12, "{} vs {} (bound {tail})", full.mu, trunc.mu);
        }
    }

    #[test]
    fn optimal_tree_is_prefix_closed_with_unit_frontier(seed in 0u64..10_000, p in 1u64..300) {
        let f = Family::from_spec(FamilySpec::dirichlet(0.5, 12, seed)).unwrap();
        let tree = draft_optimal(&f, p).unwrap();
        prop_assert_eq!(tree.len() as u64, p);
        for n in tree.nodes().iter().skip(1) {
            let parent = n.parent.unwrap();
            prop_assert_eq!(&tree.nodes()[parent].node.path[..], &n.node.path[..n.node.path.len() - 1]);
        }
        prop_assert!((tree.frontier_mass() - 1.0).abs() < 1e-9);
        // Σ P(v) equals the sum over the P lowest-value nodes
        let lowest = TokenTree::new(&f).enumerate_lowest(p, 1 << 20).unwrap();
        let s: f64 = lowest.iter().map(|n| n.prob).sum();
        prop_assert!((tree.expected_accepted() - s).abs() < 1e-9);
    }

    #[test]
    fn family_distributions_are_valid(seed in 0u64..10_000, alpha in 0.05f64..5.0, vocab in 2usize..64) {
        let f = Family::from_spec(FamilySpec::dirichlet(alpha, vocab, seed)).unwrap();
        let d = f.distribution_at(&[0]);
        let probs = d.p().probs();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(probs.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(probs.iter().all(|&x| x >= 1e-12));
    }
}

#[test]
fn synthetic_round_trip_small() {
    let f = Family::from_spec(FamilySpec::dirichlet(1.0, 8, 21)).unwrap();
    let mut buf = Vec::new();
    speclimit_core::moments::write_synthetic_trace(&f, 4000, 5, &mut buf).unwrap();
    let ing = speclimit_core::moments::parse_trace(
        std::io::Cursor::new(buf),
        IngestOptions::default(),
        std::path::Path::new("mem"),
    )
    .unwrap();
    let est = estimate(&ing.records).unwrap();
    let fam = family_moments(&f, 4000);
    let z = (est.mu - fam.mu) / est.stderr_mu.hypot(fam.stderr_mu);
    assert!(z.abs() <= 4.0, "z = {z}");
}
