//! Verification of draft trees and the draft → verify iteration loop.
//!
//! Each iteration drafts a tree in a fresh realization of the token tree
//! (subtrees are i.i.d., so re-rooting is equivalent) and lets the verifier
//! walk it: sample a child from `p`, descend while the sample is in the tree,
//! stop at the first sample outside it. The accepted count includes the
//! root, which accounts for the verifier's own bonus token.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brw_tree::{Keying, TokenTree};
use crate::distfam::Family;
use crate::drafting::{self, DraftConstraints, DraftTree};
use crate::seed::{self, stream};
use crate::stats::MeanAccumulator;
use crate::{Error, Result};

/// Iterations simulated per parallel batch. Fixed so results do not depend
/// on the worker count.
const BATCH: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DraftMode {
    /// Drafter sees the verifier's probabilities.
    Full,
    /// Drafter sees only its own `q`.
    QGreedy,
}

impl DraftMode {
    pub fn keying(self) -> Keying {
        match self {
            Self::Full => Keying::Verifier,
            Self::QGreedy => Keying::Drafter,
        }
    }
}

impl fmt::Display for DraftMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::QGreedy => "q-greedy",
        })
    }
}

impl FromStr for DraftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "q-greedy" | "q_greedy" | "qgreedy" => Ok(Self::QGreedy),
            other => Err(Error::InvalidParams(format!(
                "unknown mode `{other}` (expected full or q-greedy)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IterationOutcome {
    /// Tokens credited this iteration, root included.
    pub accepted_count: u32,
    /// Child index at which the sampled path left the tree.
    pub exit_token: u32,
    /// Tree indices of the accepted nodes, root first.
    pub path: Vec<usize>,
}

/// Runs the verifier over one draft tree.
pub fn verify<R: Rng + ?Sized>(tree: &DraftTree, rng: &mut R) -> IterationOutcome {
    let nodes = tree.nodes();
    let mut current = 0usize;
    let mut path = vec![0usize];
    loop {
        let node = &nodes[current];
        let token = node.dist.p().sample_index(rng);
        match node.child(token) {
            Some(next) => {
                debug_assert_eq!(nodes[next].node.depth(), node.node.depth() + 1);
                current = next;
                path.push(next);
            }
            None => {
                return IterationOutcome {
                    accepted_count: path.len() as u32,
                    exit_token: token,
                    path,
                }
            }
        }
    }
}

/// `Σ_{v ∈ tree} P(v)`, the exact expectation of the accepted count.
pub fn exact_expected_x(tree: &DraftTree) -> f64 {
    tree.expected_accepted()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub p_capacity: u64,
    pub mode: DraftMode,
    pub seed: u64,
    pub constraints: DraftConstraints,
}

impl RunConfig {
    pub fn new(p_capacity: u64, mode: DraftMode, seed: u64) -> Self {
        Self {
            p_capacity,
            mode,
            seed,
            constraints: DraftConstraints::default(),
        }
    }
}

/// Per-iteration observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationSample {
    pub accepted: u32,
    /// `Σ P(v)` of this iteration's tree.
    pub expected: f64,
    /// Largest keyed value inside the tree.
    pub tree_max_value: f64,
}

/// Drafts and verifies iteration `index` of a run. Pure in `(family, cfg, index)`.
pub fn simulate_iteration(family: &Family, cfg: &RunConfig, index: u64) -> Result<IterationSample> {
    let namespace = seed::derive(cfg.seed, &[index]);
    let tree = drafting::draft(
        TokenTree::realization(family, namespace),
        cfg.p_capacity,
        cfg.mode.keying(),
        cfg.constraints,
    )?;
    let mut rng = seed::rng_from_key(seed::derive(cfg.seed, &[stream::VERIFY, index]));
    let outcome = verify(&tree, &mut rng);
    Ok(IterationSample {
        accepted: outcome.accepted_count,
        expected: tree.expected_accepted(),
        tree_max_value: tree.max_key_value(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: DraftMode,
    pub p_capacity: u64,
    /// Requested token count `N`.
    pub total_tokens: u64,
    /// Iterations `n` needed to reach `N`.
    pub iterations: u64,
    /// `Σ X` over all iterations (≥ N).
    pub accepted_total: u64,
    pub mean_x: f64,
    pub stderr_x: f64,
    pub max_x: u32,
    /// `n / N`, the inverse speedup under constant verifier latency.
    pub speedup_inverse_delta: f64,
    /// Mean of the per-iteration closed form `Σ P(v)`.
    pub mean_expected_x: f64,
    pub stderr_expected_x: f64,
    /// Mean largest value inside the drafted tree (`T_P`, or `T_q(P)` in q-greedy mode).
    pub mean_tree_max_value: f64,
    pub stderr_tree_max_value: f64,
    pub seed: u64,
}

#[derive(Default)]
struct RunAccumulator {
    x: MeanAccumulator,
    expected: MeanAccumulator,
    tree_max: MeanAccumulator,
    total: u64,
    max_x: u32,
}

impl RunAccumulator {
    fn push(&mut self, s: &IterationSample) {
        self.x.push(f64::from(s.accepted));
        self.expected.push(s.expected);
        self.tree_max.push(s.tree_max_value);
        self.total += u64::from(s.accepted);
        self.max_x = self.max_x.max(s.accepted);
    }

    fn report(&self, cfg: &RunConfig, total_tokens: u64) -> RunReport {
        let iterations = self.x.count();
        RunReport {
            mode: cfg.mode,
            p_capacity: cfg.p_capacity,
            total_tokens,
            iterations,
            accepted_total: self.total,
            mean_x: self.x.mean(),
            stderr_x: self.x.stderr(),
            max_x: self.max_x,
            speedup_inverse_delta: iterations as f64 / total_tokens as f64,
            mean_expected_x: self.expected.mean(),
            stderr_expected_x: self.expected.stderr(),
            mean_tree_max_value: self.tree_max.mean(),
            stderr_tree_max_value: self.tree_max.stderr(),
            seed: cfg.seed,
        }
    }
}

fn check_mode(family: &Family, cfg: &RunConfig) -> Result<()> {
    if cfg.mode == DraftMode::QGreedy && !family.is_paired() {
        return Err(Error::NotPaired(family.label()));
    }
    if cfg.p_capacity == 0 {
        return Err(Error::InvalidParams("capacity P must be at least 1".into()));
    }
    Ok(())
}

fn batch(family: &Family, cfg: &RunConfig, start: u64, len: u64) -> Result<Vec<IterationSample>> {
    (start..start + len)
        .into_par_iter()
        .map(|i| simulate_iteration(family, cfg, i))
        .collect()
}

/// Iterates draft → verify until at least `n_tokens` tokens are generated.
pub fn run_with(family: &Family, cfg: &RunConfig, n_tokens: u64) -> Result<RunReport> {
    check_mode(family, cfg)?;
    if n_tokens == 0 {
        return Err(Error::InvalidParams("n_tokens must be at least 1".into()));
    }
    let mut acc = RunAccumulator::default();
    let mut start = 0;
    while acc.total < n_tokens {
        // every iteration yields at least one token
        let len = BATCH.min(n_tokens - acc.total);
        for s in batch(family, cfg, start, len)? {
            acc.push(&s);
            if acc.total >= n_tokens {
                break;
            }
        }
        start += len;
    }
    Ok(acc.report(cfg, n_tokens))
}

pub fn run(
    family: &Family,
    p_capacity: u64,
    n_tokens: u64,
    mode: DraftMode,
    seed: u64,
) -> Result<RunReport> {
    run_with(family, &RunConfig::new(p_capacity, mode, seed), n_tokens)
}

/// Runs exactly `iterations` iterations; `total_tokens` reports the tokens produced.
pub fn run_iterations(family: &Family, cfg: &RunConfig, iterations: u64) -> Result<RunReport> {
    check_mode(family, cfg)?;
    let mut acc = RunAccumulator::default();
    let mut start = 0;
    while start < iterations {
        let len = BATCH.min(iterations - start);
        for s in batch(family, cfg, start, len)? {
            acc.push(&s);
        }
        start += len;
    }
    let total = acc.total.max(1);
    Ok(acc.report(cfg, total))
}
