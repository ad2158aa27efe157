//! Draft-tree construction.
//!
//! The full-knowledge drafter takes the `P` nodes with the highest acceptance
//! probability `P(v)`; the expected accepted length of that tree is
//! `Σ_{v ∈ tree} P(v)`. The imperfect-knowledge drafter runs the same
//! best-first search keyed by its own speculated probabilities `Q(v)`, and
//! the tree is then scored under the verifier's `p`.

use serde::{Deserialize, Serialize};

use crate::brw_tree::{Expander, Keying, NodeRef, TokenTree};
use crate::distfam::{Family, NodeDistribution};
use crate::{Error, Result};

/// Optional depth and per-level width caps, off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftConstraints {
    /// Deepest allowed node depth (root is depth 0).
    pub max_depth: Option<u32>,
    /// Most nodes allowed at any single depth.
    pub max_width: Option<u32>,
}

impl DraftConstraints {
    pub fn is_unconstrained(&self) -> bool {
        self.max_depth.is_none() && self.max_width.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct DraftNode {
    pub node: NodeRef,
    /// `Q(v)` for drafter-keyed trees.
    pub q_prob: Option<f64>,
    /// Value under the keying that built the tree.
    pub key_value: f64,
    pub parent: Option<usize>,
    /// Child distribution; the verifier samples from its `p`.
    pub dist: NodeDistribution,
    children: Vec<(u32, usize)>,
}

impl DraftNode {
    /// Tree index of child `index`, if that child is in the tree.
    pub fn child(&self, index: u32) -> Option<usize> {
        self.children
            .iter()
            .find_map(|&(i, at)| (i == index).then_some(at))
    }
}

/// A child of a tree node that is not itself in the tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierNode {
    pub parent: usize,
    pub index: u32,
    pub prob: f64,
    pub value: f64,
    pub q_prob: Option<f64>,
    /// `None` when `q = 0` (infinite drafter value).
    pub q_value: Option<f64>,
}

/// A prefix-closed subtree of at most `P` nodes, rooted at the current prefix.
#[derive(Debug, Clone)]
pub struct DraftTree {
    nodes: Vec<DraftNode>,
    keying: Keying,
    expected_accepted: f64,
}

impl DraftTree {
    pub(crate) fn build(
        tree: TokenTree<'_>,
        p_capacity: u64,
        keying: Keying,
        constraints: DraftConstraints,
    ) -> Self {
        let mut ex = Expander::new(tree, keying, constraints);
        for _ in 0..p_capacity.max(1) {
            if ex.pop().is_none() {
                break;
            }
        }
        let mut nodes: Vec<DraftNode> = ex
            .arena
            .into_iter()
            .map(|e| DraftNode {
                node: e.node,
                q_prob: e.q_prob,
                key_value: e.key_value,
                parent: e.parent,
                dist: e.dist,
                children: Vec::new(),
            })
            .collect();
        for i in 1..nodes.len() {
            let parent = nodes[i].parent.expect("non-root node has a parent");
            let index = *nodes[i].node.path.last().expect("non-root node has a path");
            nodes[parent].children.push((index, i));
        }
        let expected_accepted = nodes.iter().map(|n| n.node.prob).sum();
        Self {
            nodes,
            keying,
            expected_accepted,
        }
    }

    pub fn nodes(&self) -> &[DraftNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn keying(&self) -> Keying {
        self.keying
    }

    /// `Σ_{v ∈ tree} P(v)`, the expected number of tokens this tree yields.
    pub fn expected_accepted(&self) -> f64 {
        self.expected_accepted
    }

    /// Largest value inside the tree under its keying (`T_P` or `T_q(P)`).
    pub fn max_key_value(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.key_value)
            .fold(0.0, f64::max)
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.node.depth()).max().unwrap_or(0)
    }

    /// All children with `p > 0` of tree nodes that are not in the tree.
    pub fn frontier(&self) -> Vec<FrontierNode> {
        let mut out = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let q = n.dist.q();
            for (ci, &beta) in n.dist.p().probs().iter().enumerate() {
                if beta <= 0.0 || n.child(ci as u32).is_some() {
                    continue;
                }
                let q_prob = match (n.q_prob, q) {
                    (Some(qp), Some(q)) => Some(qp * q[ci]),
                    _ => None,
                };
                out.push(FrontierNode {
                    parent: i,
                    index: ci as u32,
                    prob: n.node.prob * beta,
                    value: n.node.value - beta.ln(),
                    q_prob,
                    q_value: match q {
                        Some(q) if q[ci] > 0.0 => Some(n.key_value - q[ci].ln()),
                        _ => None,
                    },
                });
            }
        }
        out
    }

    /// `Σ_{u ∈ frontier} P(u)`; one for every finite tree.
    pub fn frontier_mass(&self) -> f64 {
        self.frontier().iter().map(|f| f.prob).sum()
    }
}

/// The optimal full-knowledge tree in the family's default realization.
pub fn draft_optimal(family: &Family, p_capacity: u64) -> Result<DraftTree> {
    check_capacity(p_capacity)?;
    Ok(DraftTree::build(
        TokenTree::new(family),
        p_capacity,
        Keying::Verifier,
        DraftConstraints::default(),
    ))
}

/// The drafter-optimal tree under `q`, scored under `p`.
pub fn draft_q_greedy(family: &Family, p_capacity: u64) -> Result<DraftTree> {
    draft(
        TokenTree::new(family),
        p_capacity,
        Keying::Drafter,
        DraftConstraints::default(),
    )
}

/// Drafts in an arbitrary realization.
pub fn draft(
    tree: TokenTree<'_>,
    p_capacity: u64,
    keying: Keying,
    constraints: DraftConstraints,
) -> Result<DraftTree> {
    check_capacity(p_capacity)?;
    if keying == Keying::Drafter && !tree.family().is_paired() {
        return Err(Error::NotPaired(tree.family().label()));
    }
    Ok(DraftTree::build(tree, p_capacity, keying, constraints))
}

fn check_capacity(p_capacity: u64) -> Result<()> {
    if p_capacity == 0 {
        return Err(Error::InvalidParams("capacity P must be at least 1".into()));
    }
    Ok(())
}
