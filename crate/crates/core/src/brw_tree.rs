//! The lazily realized token tree.
//!
//! Node values are `V(v) = −ln P(v)`, the position of `v` in the branching
//! random walk. Best-first expansion pops nodes in nondecreasing value
//! (ties: lexicographically smaller path first). Popping a node inserts only
//! its best child and the popped node's next-best sibling, so the queue grows
//! by at most one entry per pop.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distfam::{Family, NodeDistribution};
use crate::drafting::DraftConstraints;
use crate::seed;
use crate::{Error, Result};

/// A node of the token tree, identified by its path from the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRef {
    pub path: Vec<u32>,
    /// `−ln P(v)` in nats.
    pub value: f64,
    /// `P(v)`, the product of acceptance probabilities along the path.
    pub prob: f64,
}

impl NodeRef {
    pub fn root() -> Self {
        Self {
            path: Vec::new(),
            value: 0.0,
            prob: 1.0,
        }
    }

    pub fn depth(&self) -> usize {
        self.path.len()
    }
}

/// A node count that may have hit its cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Count {
    Exact(u64),
    /// The cap was reached; the true count is at least this.
    AtLeast(u64),
}

impl Count {
    pub fn value(self) -> u64 {
        match self {
            Self::Exact(n) | Self::AtLeast(n) => n,
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, Self::Exact(_))
    }
}

/// Partial output of an enumeration that ran out of budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncated<T> {
    pub partial: T,
    pub limit: u64,
}

impl From<Truncated<Vec<NodeRef>>> for Error {
    fn from(t: Truncated<Vec<NodeRef>>) -> Self {
        Error::Truncated {
            limit: t.limit,
            reached: t.partial.len() as u64,
        }
    }
}

/// Which probabilities order the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Keying {
    /// The verifier's `p`.
    Verifier,
    /// The drafter's `q`; children with `q = 0` are never expanded.
    Drafter,
}

/// One realization of the token tree of a family.
#[derive(Debug, Clone, Copy)]
pub struct TokenTree<'a> {
    family: &'a Family,
    root_key: u64,
}

impl<'a> TokenTree<'a> {
    /// The default realization, consistent with [`Family::distribution_at`].
    pub fn new(family: &'a Family) -> Self {
        Self::realization(family, 0)
    }

    /// An independent realization. Distinct namespaces give i.i.d. trees.
    pub fn realization(family: &'a Family, namespace: u64) -> Self {
        Self {
            family,
            root_key: seed::root_key(family.seed(), namespace),
        }
    }

    pub fn family(&self) -> &'a Family {
        self.family
    }

    pub fn root_key(&self) -> u64 {
        self.root_key
    }

    pub fn distribution_at(&self, path: &[u32]) -> NodeDistribution {
        self.family
            .distribution_for_key(seed::path_key(self.root_key, path))
    }

    /// The `k` lowest-value nodes in nondecreasing value order.
    pub fn enumerate_lowest(
        &self,
        k: u64,
        budget: u64,
    ) -> std::result::Result<Vec<NodeRef>, Truncated<Vec<NodeRef>>> {
        let mut ex = Expander::new(*self, Keying::Verifier, DraftConstraints::default());
        let mut out = Vec::with_capacity(k.min(1 << 16) as usize);
        while (out.len() as u64) < k {
            if out.len() as u64 >= budget {
                return Err(Truncated {
                    partial: out,
                    limit: budget,
                });
            }
            match ex.pop() {
                Some(i) => out.push(ex.arena[i].node.clone()),
                None => {
                    return Err(Truncated {
                        partial: out,
                        limit: budget,
                    })
                }
            }
        }
        Ok(out)
    }

    /// `N(t) = #{v : V(v) ≤ t}` for this realization.
    pub fn count_below(&self, t: f64, cap: u64) -> Count {
        let mut ex = Expander::new(*self, Keying::Verifier, DraftConstraints::default());
        let mut n = 0;
        while ex.peek_key().is_some_and(|k| k <= t) {
            if n >= cap {
                return Count::AtLeast(cap);
            }
            ex.pop();
            n += 1;
        }
        Count::Exact(n)
    }

    /// Value of the `p_capacity`-th smallest node.
    pub fn t_p(&self, p_capacity: u64, budget: u64) -> Result<f64> {
        let nodes = self.enumerate_lowest(p_capacity.max(1), budget)?;
        Ok(nodes.last().map_or(0.0, |n| n.value))
    }

    /// Number of nodes at exactly `depth` with value ≤ `t`, by depth-first
    /// layer expansion (independent of the best-first queue).
    pub fn layer_count(&self, depth: usize, t: f64, cap: u64) -> Count {
        let mut n = 0u64;
        let mut stack = vec![(self.root_key, 0usize, 0.0f64)];
        while let Some((key, d, value)) = stack.pop() {
            if d == depth {
                n += 1;
                if n >= cap {
                    return Count::AtLeast(cap);
                }
                continue;
            }
            let dist = self.family.distribution_for_key(key);
            for (i, &beta) in dist.p().probs().iter().enumerate() {
                let child = value - beta.ln();
                if child <= t {
                    stack.push((seed::child_key(key, i as u32), d + 1, child));
                }
            }
        }
        Count::Exact(n)
    }
}

pub fn enumerate_lowest(
    family: &Family,
    k: u64,
    budget: u64,
) -> std::result::Result<Vec<NodeRef>, Truncated<Vec<NodeRef>>> {
    TokenTree::new(family).enumerate_lowest(k, budget)
}

pub fn count_below(family: &Family, t: f64, cap: u64) -> Count {
    TokenTree::new(family).count_below(t, cap)
}

pub fn t_p(family: &Family, p_capacity: u64, budget: u64) -> Result<f64> {
    TokenTree::new(family).t_p(p_capacity, budget)
}

/// One increment of the size-biased spine walk: draw a child distribution,
/// pick child `u` with probability `β_u`, return `−ln β_u`.
pub fn spine_step<R: Rng + ?Sized>(family: &Family, rng: &mut R) -> f64 {
    let dist = family.sample(rng);
    let p = dist.p();
    -p.probs()[p.sample_index(rng) as usize].ln()
}

// ---------------------------------------------------------------------------
// Best-first expansion
// ---------------------------------------------------------------------------

/// A popped node with its child distribution.
#[derive(Debug, Clone)]
pub(crate) struct Expanded {
    pub node: NodeRef,
    /// Value under the expansion's keying (`V` or `V_q`).
    pub key_value: f64,
    /// `Q(v)` under drafter keying.
    pub q_prob: Option<f64>,
    pub parent: Option<usize>,
    pub dist: NodeDistribution,
    hash: u64,
    /// Children in key order: (child index, key increment).
    order: Vec<(u32, f64)>,
}

#[derive(Debug)]
struct Candidate {
    key_value: f64,
    path: Vec<u32>,
    parent: Option<usize>,
    rank: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key_value
            .total_cmp(&self.key_value)
            .then_with(|| other.path.cmp(&self.path))
    }
}

pub(crate) struct Expander<'a> {
    tree: TokenTree<'a>,
    keying: Keying,
    constraints: DraftConstraints,
    heap: BinaryHeap<Candidate>,
    level_counts: Vec<u32>,
    pub arena: Vec<Expanded>,
}

impl<'a> Expander<'a> {
    pub fn new(tree: TokenTree<'a>, keying: Keying, constraints: DraftConstraints) -> Self {
        let mut heap = BinaryHeap::new();
        heap.push(Candidate {
            key_value: 0.0,
            path: Vec::new(),
            parent: None,
            rank: 0,
        });
        Self {
            tree,
            keying,
            constraints,
            heap,
            level_counts: Vec::new(),
            arena: Vec::new(),
        }
    }

    pub fn peek_key(&self) -> Option<f64> {
        self.heap.peek().map(|c| c.key_value)
    }

    /// Expands the next node; returns its arena index.
    pub fn pop(&mut self) -> Option<usize> {
        loop {
            let cand = self.heap.pop()?;
            let depth = cand.path.len();
            if self.level_counts.len() <= depth {
                self.level_counts.resize(depth + 1, 0);
            }
            if let Some(w) = self.constraints.max_width {
                // siblings share the depth, so nothing behind this one can fit either
                if self.level_counts[depth] >= w {
                    continue;
                }
            }
            self.level_counts[depth] += 1;
            return Some(self.expand(cand));
        }
    }

    fn expand(&mut self, cand: Candidate) -> usize {
        let (node, q_prob, hash) = match cand.parent {
            None => (
                NodeRef::root(),
                (self.keying == Keying::Drafter).then_some(1.0),
                self.tree.root_key,
            ),
            Some(pi) => {
                let parent = &self.arena[pi];
                let idx = *cand.path.last().expect("non-root candidate has a path");
                let beta = parent.dist.p().probs()[idx as usize];
                let q_prob = match (parent.q_prob, parent.dist.q()) {
                    (Some(qp), Some(q)) => Some(qp * q[idx as usize]),
                    _ => None,
                };
                (
                    NodeRef {
                        value: parent.node.value - beta.ln(),
                        prob: parent.node.prob * beta,
                        path: cand.path,
                    },
                    q_prob,
                    seed::child_key(parent.hash, idx),
                )
            }
        };
        let dist = self.tree.family.distribution_for_key(hash);
        let order = child_order(&dist, self.keying);
        let index = self.arena.len();
        let depth = node.path.len();

        if self.constraints.max_depth.is_none_or(|d| depth < d as usize) {
            if let Some(&(ci, inc)) = order.first() {
                let mut path = node.path.clone();
                path.push(ci);
                self.heap.push(Candidate {
                    key_value: cand.key_value + inc,
                    path,
                    parent: Some(index),
                    rank: 0,
                });
            }
        }
        if let Some(pi) = cand.parent {
            let parent = &self.arena[pi];
            if let Some(&(si, inc)) = parent.order.get(cand.rank + 1) {
                let mut path = parent.node.path.clone();
                path.push(si);
                self.heap.push(Candidate {
                    key_value: parent.key_value + inc,
                    path,
                    parent: Some(pi),
                    rank: cand.rank + 1,
                });
            }
        }

        self.arena.push(Expanded {
            node,
            key_value: cand.key_value,
            q_prob,
            parent: cand.parent,
            dist,
            hash,
            order,
        });
        index
    }
}

fn child_order(dist: &NodeDistribution, keying: Keying) -> Vec<(u32, f64)> {
    match (keying, dist.q()) {
        (Keying::Drafter, Some(q)) => {
            let mut order: Vec<(u32, f64)> = q
                .iter()
                .enumerate()
                .filter(|(_, &qi)| qi > 0.0)
                .map(|(i, &qi)| (i as u32, -qi.ln()))
                .collect();
            order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            order
        }
        _ => dist
            .p()
            .probs()
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| (i as u32, -p.ln()))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::distfam::{family_moments, FamilySpec};
    use crate::stats::MeanAccumulator;
    use crate::DEFAULT_BUDGET;

    fn fam(spec: FamilySpec) -> Family {
        Family::from_spec(spec).unwrap()
    }

    #[test]
    fn fixed_chain_enumeration() {
        let f = fam(FamilySpec::fixed(&[0.7, 0.3]));
        let nodes = enumerate_lowest(&f, 4, DEFAULT_BUDGET).unwrap();
        let paths: Vec<Vec<u32>> = nodes.iter().map(|n| n.path.clone()).collect();
        assert_eq!(paths, vec![vec![], vec![0], vec![0, 0], vec![0, 0, 0]]);
        let probs: Vec<f64> = nodes.iter().map(|n| n.prob).collect();
        for (p, e) in probs.iter().zip([1.0, 0.7, 0.49, 0.343]) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_binary_levels() {
        let f = fam(FamilySpec::uniform(2));
        let nodes = enumerate_lowest(&f, 7, DEFAULT_BUDGET).unwrap();
        let paths: Vec<Vec<u32>> = nodes.iter().map(|n| n.path.clone()).collect();
        assert_eq!(
            paths,
            vec![
                vec![],
                vec![0],
                vec![1],
                vec![0, 0],
                vec![0, 1],
                vec![1, 0],
                vec![1, 1]
            ]
        );
    }

    #[test]
    fn k_one_is_root() {
        let f = fam(FamilySpec::dirichlet(0.5, 16, 4));
        assert_eq!(enumerate_lowest(&f, 1, 1).unwrap(), vec![NodeRef::root()]);
    }

    #[test]
    fn budget_truncation_keeps_partial() {
        let f = fam(FamilySpec::uniform(3));
        let err = enumerate_lowest(&f, 10, 4).unwrap_err();
        assert_eq!(err.partial.len(), 4);
        assert_eq!(err.limit, 4);
    }

    #[test]
    fn count_below_examples() {
        let u = fam(FamilySpec::uniform(2));
        assert_eq!(count_below(&u, 2.0 * LN_2, 1000), Count::Exact(7));
        assert_eq!(count_below(&u, 0.0, 1000), Count::Exact(1));
        assert_eq!(count_below(&u, 10.0, 5), Count::AtLeast(5));
        let f = fam(FamilySpec::fixed(&[0.7, 0.3]));
        assert_eq!(count_below(&f, 0.4, 1000), Count::Exact(2));
    }

    #[test]
    fn t_p_examples() {
        let u = fam(FamilySpec::uniform(2));
        assert!((t_p(&u, 7, DEFAULT_BUDGET).unwrap() - 2.0 * LN_2).abs() < 1e-15);
        assert_eq!(t_p(&u, 1, DEFAULT_BUDGET).unwrap(), 0.0);
        let f = fam(FamilySpec::fixed(&[0.7, 0.3]));
        assert!((t_p(&f, 4, DEFAULT_BUDGET).unwrap() + 0.343f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn layer_count_matches_count_below() {
        let f = fam(FamilySpec::dirichlet(1.0, 4, 21));
        let tree = TokenTree::new(&f);
        let t = 2.5;
        let total: u64 = (0..200).map(|d| tree.layer_count(d, t, u64::MAX).value()).sum();
        assert_eq!(tree.count_below(t, u64::MAX), Count::Exact(total));
    }

    #[test]
    fn spine_step_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = fam(FamilySpec::uniform(2));
        assert!((0..100).all(|_| spine_step(&u, &mut rng) == LN_2));

        let spec = FamilySpec::new(
            crate::distfam::FamilyKind::Fixed(crate::distfam::FixedParams {
                probs: vec![1.0],
                allow_point_mass: true,
            }),
            0,
        );
        let point = fam(spec);
        assert!((0..10).all(|_| spine_step(&point, &mut rng) == 0.0));
    }

    #[test]
    fn spine_moments_match_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for spec in [
            FamilySpec::fixed(&[0.7, 0.3]),
            FamilySpec::dirichlet(1.0, 8, 3),
        ] {
            let f = fam(spec);
            let m = family_moments(&f, 200_000);
            let mut first = MeanAccumulator::new();
            let mut second = MeanAccumulator::new();
            for _ in 0..100_000 {
                let s = spine_step(&f, &mut rng);
                first.push(s);
                second.push(s * s);
            }
            let z1 = (first.mean() - m.mu) / first.stderr().hypot(m.stderr_mu);
            let z2 = (second.mean() - m.mu2) / second.stderr().hypot(m.stderr_mu2);
            assert!(z1.abs() < 4.0, "{} mean z = {z1}", f.label());
            assert!(z2.abs() < 4.0, "{} second moment z = {z2}", f.label());
        }
    }

    #[test]
    fn values_match_probs() {
        let f = fam(FamilySpec::dirichlet(0.3, 32, 8));
        let nodes = enumerate_lowest(&f, 500, DEFAULT_BUDGET).unwrap();
        for n in &nodes {
            let rel = ((-n.value).exp() - n.prob).abs() / n.prob;
            assert!(rel < 1e-12, "{rel}");
        }
    }
}
