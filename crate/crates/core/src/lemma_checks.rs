//! Executable checks of the identities behind the bounds.
//!
//! Equality claims pass when `|z| ≤ 4`; inequality claims get a one-sided
//! `4σ` slack. Trials run in parallel but are collected in index order, so
//! every report is a pure function of `(family, seed, trials)`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{renewal_bounds, renewal_bounds_first_passage, MomentParams};
use crate::brw_tree::{spine_step, Count, Keying, TokenTree};
use crate::distfam::{family_moments, Family, FamilySpec};
use crate::drafting::{draft, draft_optimal, DraftConstraints};
use crate::seed::{self, stream};
use crate::stats::{z_score, MeanAccumulator};
use crate::{Error, Result, DEFAULT_BUDGET};

pub const Z_THRESHOLD: f64 = 4.0;
/// Relative tolerance under which two exact values count as equal.
pub const EXACT_TOLERANCE: f64 = 1e-9;
pub const FRONTIER_TOLERANCE: f64 = 1e-6;
/// Draws used to estimate μ and μ₂ for the renewal bounds.
pub const MOMENT_SAMPLES: u64 = 200_000;

const TAG_M2O: u64 = 1;
const TAG_RENEWAL: u64 = 2;
const TAG_CLAIM: u64 = 3;
const TAG_FRONTIER: u64 = 4;
const TAG_TP: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `lhs = rhs` within `|z| ≤ 4`.
    Equal,
    /// `lhs ≤ rhs + 4σ`.
    AtMost,
    /// `lhs ≥ rhs − 4σ`.
    AtLeast,
    /// Reported only.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub relation: Relation,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    /// `(lhs − rhs)/σ`; zero for exact agreement.
    pub z: f64,
    pub pass: bool,
}

impl CheckItem {
    pub fn new(name: impl Into<String>, relation: Relation, lhs: (f64, f64), rhs: (f64, f64)) -> Self {
        let (a, sa) = lhs;
        let (b, sb) = rhs;
        let close = (a - b).abs() <= EXACT_TOLERANCE * (1.0 + b.abs());
        let z = if close { 0.0 } else { z_score(a, sa, b, sb) };
        let pass = match relation {
            Relation::Equal => z.abs() <= Z_THRESHOLD,
            Relation::AtMost => z <= Z_THRESHOLD,
            Relation::AtLeast => z >= -Z_THRESHOLD,
            Relation::Info => true,
        };
        Self {
            name: name.into(),
            relation,
            lhs: a,
            lhs_stderr: sa,
            rhs: b,
            rhs_stderr: sb,
            z,
            pass,
        }
    }

    fn mean(name: impl Into<String>, relation: Relation, lhs: &MeanAccumulator, rhs: &MeanAccumulator) -> Self {
        Self::new(name, relation, (lhs.mean(), lhs.stderr()), (rhs.mean(), rhs.stderr()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub family: String,
    pub seed: u64,
    pub trials: u64,
    /// Realizations that hit the expansion cap; any makes the check fail.
    pub truncated: u64,
    pub items: Vec<CheckItem>,
    pub notes: Vec<String>,
    pub pass: bool,
}

impl CheckReport {
    fn new(check: &str, family: &Family, trials: u64) -> Self {
        Self {
            check: check.into(),
            family: family.label(),
            seed: family.seed(),
            trials,
            truncated: 0,
            items: Vec::new(),
            notes: Vec::new(),
            pass: true,
        }
    }

    fn finish(mut self) -> Self {
        self.pass = self.truncated == 0 && self.items.iter().all(|i| i.pass);
        self
    }

    pub fn failing(&self) -> impl Iterator<Item = &CheckItem> {
        self.items.iter().filter(|i| !i.pass)
    }
}

fn walk_rng(family: &Family, tag: u64, i: u64) -> rand_chacha::ChaCha8Rng {
    seed::rng_from_key(seed::derive(family.seed(), &[stream::SPINE, tag, i]))
}

fn realization(family: &Family, tag: u64, i: u64) -> TokenTree<'_> {
    TokenTree::realization(family, seed::derive(tag, &[i]))
}

fn gate_non_arithmetic(family: &Family) -> Result<()> {
    if family.is_arithmetic() {
        return Err(Error::Arithmetic(format!(
            "{family} puts every -ln β on a lattice, so U(x) has atoms at the boundaries \
             (uniform V=2 jumps at every multiple of ln 2) and the renewal bounds can fail there"
        )));
    }
    Ok(())
}

fn accumulate(xs: &[f64]) -> MeanAccumulator {
    xs.iter().copied().collect()
}

/// `E[Σ_{|v|=n} 1{V(v) ≤ t}] = E[e^{S_n} 1{S_n ≤ t}]`, plus `ψ(1) = 0`.
pub fn check_many_to_one(family: &Family, depth: usize, t: f64, trials: u64, cap: u64) -> Result<CheckReport> {
    if depth > 6 {
        return Err(Error::InvalidParams(format!("depth {depth} exceeds 6")));
    }
    if trials == 0 {
        return Err(Error::InvalidParams("trials must be positive".into()));
    }
    let mut report = CheckReport::new("many-to-one", family, trials);

    let counts: Vec<Count> = (0..trials)
        .into_par_iter()
        .map(|i| realization(family, TAG_M2O, i).layer_count(depth, t, cap))
        .collect();
    report.truncated = counts.iter().filter(|c| !c.is_exact()).count() as u64;
    let lhs: Vec<f64> = counts.iter().map(|c| c.value() as f64).collect();

    let per_walk: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = walk_rng(family, TAG_M2O, i);
            let mut s = 0.0;
            let mut psi_dev = 0.0f64;
            for _ in 0..depth {
                let dist = family.sample(&mut rng);
                let p = dist.p();
                let sum: f64 = p.probs().iter().sum();
                psi_dev = psi_dev.max(sum.ln().abs());
                s -= p.probs()[p.sample_index(&mut rng) as usize].ln();
            }
            let g = if s <= t { s.exp() } else { 0.0 };
            (g, psi_dev)
        })
        .collect();
    let rhs: Vec<f64> = per_walk.iter().map(|w| w.0).collect();
    let psi = per_walk.iter().map(|w| w.1).fold(0.0, f64::max);

    report.items.push(CheckItem::mean(
        format!("layer sum depth={depth} t={t:.6}"),
        Relation::Equal,
        &accumulate(&lhs),
        &accumulate(&rhs),
    ));
    if family.is_deterministic() {
        if let Some(exact) = exact_spine_expectation(family, depth, t) {
            report.items.push(CheckItem::new(
                "spine side by exact enumeration",
                Relation::Equal,
                (lhs[0], 0.0),
                (exact, 0.0),
            ));
        }
    }
    report.items.push(CheckItem::new(
        "psi(1) = ln E[Σβ] = 0",
        Relation::Equal,
        (psi, 0.0),
        (0.0, 0.0),
    ));
    Ok(report.finish())
}

/// `Σ_{i₁..iₙ} Π β · e^{Σ −ln β} 1{Σ −ln β ≤ t}` for a constant distribution.
fn exact_spine_expectation(family: &Family, depth: usize, t: f64) -> Option<f64> {
    let dist = family.distribution_at(&[]);
    let probs = dist.p().probs().to_vec();
    if (probs.len() as f64).powi(depth as i32) > 1e6 {
        return None;
    }
    fn rec(probs: &[f64], left: usize, weight: f64, s: f64, t: f64) -> f64 {
        if left == 0 {
            return if s <= t { weight * s.exp() } else { 0.0 };
        }
        probs
            .iter()
            .map(|&b| rec(probs, left - 1, weight * b, s - b.ln(), t))
            .sum()
    }
    Some(rec(&probs, depth, 1.0, 0.0, t))
}

/// Renewal function `U(x) = Σ_d Pr[S_d ≤ x]` per walk: the number of partial
/// sums (including `S₀ = 0`) not exceeding each `x`.
fn renewal_counts<R: rand::Rng>(family: &Family, xs: &[f64], rng: &mut R) -> Vec<f64> {
    let x_max = xs.iter().copied().fold(0.0, f64::max);
    let mut sums = Vec::new();
    let mut s = 0.0;
    while s <= x_max {
        sums.push(s);
        s += spine_step(family, rng);
    }
    xs.iter()
        .map(|&x| sums.iter().filter(|&&v| v <= x).count() as f64)
        .collect()
}

/// Monte Carlo `U(x)` against the first-passage bounds
/// `x/μ ≤ U(x) ≤ x/μ + μ₂/μ²`.
///
/// The shifted lower bound `x/μ + 1` is reported alongside without a verdict:
/// `U(x) − x/μ` tends to `μ₂/(2μ²)`, which is below one for most families,
/// so that bound fails for large `x`. The moment estimates' own standard
/// errors are propagated into the bounds.
pub fn check_renewal(family: &Family, x_grid: &[f64], trials: u64) -> Result<CheckReport> {
    gate_non_arithmetic(family)?;
    if trials == 0 || x_grid.is_empty() {
        return Err(Error::InvalidParams("need trials and a nonempty x grid".into()));
    }
    if let Some(x) = x_grid.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidParams(format!("x = {x} must be finite and nonnegative")));
    }
    let m = family_moments(family, MOMENT_SAMPLES);
    m.validate()?;
    let mut report = CheckReport::new("renewal", family, trials);

    let walks: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| renewal_counts(family, x_grid, &mut walk_rng(family, TAG_RENEWAL, i)))
        .collect();
    for (j, &x) in x_grid.iter().enumerate() {
        let u: MeanAccumulator = walks.iter().map(|w| w[j]).collect();
        let u = (u.mean(), u.stderr());
        let (stated_lo, _) = renewal_bounds(&m, x)?;
        let (lo, hi) = renewal_bounds_first_passage(&m, x)?;
        let (se_lo, se_hi) = renewal_bound_stderr(&m, x);
        report.items.push(CheckItem::new(format!("U({x}) >= x/mu"), Relation::AtLeast, u, (lo, se_lo)));
        report.items.push(CheckItem::new(
            format!("U({x}) <= x/mu + mu2/mu^2"),
            Relation::AtMost,
            u,
            (hi, se_hi),
        ));
        report.items.push(CheckItem::new(
            format!("U({x}) vs x/mu + 1"),
            Relation::Info,
            u,
            (stated_lo, se_lo),
        ));
    }
    report.notes.push(format!("mu = {:.6} ± {:.2e}, mu2 = {:.6} ± {:.2e}", m.mu, m.stderr_mu, m.mu2, m.stderr_mu2));
    Ok(report.finish())
}

/// Delta-method standard errors of the two renewal bounds.
fn renewal_bound_stderr(m: &MomentParams, x: f64) -> (f64, f64) {
    let mu = m.mu;
    let lo = x / (mu * mu) * m.stderr_mu;
    let d_mu = x / (mu * mu) + 2.0 * m.mu2 / (mu * mu * mu);
    let hi = ((d_mu * m.stderr_mu).powi(2) + (m.stderr_mu2 / (mu * mu)).powi(2)).sqrt();
    (lo, hi)
}

/// `E[N(t)]` by counting against the spine form `E[Σ_d e^{S_d} 1{S_d ≤ t}]`.
///
/// Arithmetic families are accepted: the discrete sum counts boundary atoms
/// on both sides alike, unlike the Stieltjes form of the renewal checks.
pub fn check_claim_nt(family: &Family, t: f64, trials: u64, cap: u64) -> Result<CheckReport> {
    if trials == 0 || !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParams("need trials and a finite t ≥ 0".into()));
    }
    let mut report = CheckReport::new("claim-nt", family, trials);
    let counts: Vec<Count> = (0..trials)
        .into_par_iter()
        .map(|i| realization(family, TAG_CLAIM, i).count_below(t, cap))
        .collect();
    report.truncated = counts.iter().filter(|c| !c.is_exact()).count() as u64;
    let lhs: MeanAccumulator = counts.iter().map(|c| c.value() as f64).collect();

    let rhs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = walk_rng(family, TAG_CLAIM, i);
            let mut s = 0.0f64;
            let mut acc = 0.0;
            while s <= t {
                acc += s.exp();
                s += spine_step(family, &mut rng);
            }
            acc
        })
        .collect();
    report.items.push(CheckItem::mean(
        format!("E[N({t:.6})]"),
        Relation::Equal,
        &lhs,
        &accumulate(&rhs),
    ));
    Ok(report.finish())
}

/// `Σ_{u ∈ frontier} P(u) = 1` for the optimal tree of every realization.
pub fn check_frontier_mass(family: &Family, p_capacity: u64, trials: u64) -> Result<CheckReport> {
    if trials == 0 {
        return Err(Error::InvalidParams("trials must be positive".into()));
    }
    let mut report = CheckReport::new("frontier", family, trials);
    let masses: Vec<Result<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let tree = draft(
                realization(family, TAG_FRONTIER, i),
                p_capacity,
                Keying::Verifier,
                DraftConstraints::default(),
            )?;
            Ok(tree.frontier_mass())
        })
        .collect();
    let mut worst = 0.0f64;
    for m in masses {
        worst = worst.max((m? - 1.0).abs());
    }
    report.items.push(CheckItem {
        name: format!("max |frontier mass - 1| at P={p_capacity}"),
        relation: Relation::AtMost,
        lhs: worst,
        lhs_stderr: 0.0,
        rhs: FRONTIER_TOLERANCE,
        rhs_stderr: 0.0,
        z: 0.0,
        pass: worst <= FRONTIER_TOLERANCE,
    });
    Ok(report.finish())
}

/// Outcome of exhaustive search over rooted subtrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForce {
    pub subtrees: u64,
    pub best_value: f64,
    pub best_tree: Vec<Vec<u32>>,
}

/// Enumerates every prefix-closed subtree of at most `p_capacity` nodes and
/// depth at most `max_depth` in the family's default realization, scoring
/// each by `Σ Π β` with probabilities multiplied afresh along every path.
pub fn exhaustive_optimum(family: &Family, p_capacity: u64, max_depth: u32) -> BruteForce {
    struct Search<'a> {
        family: &'a Family,
        cap: usize,
        max_depth: usize,
        dists: HashMap<Vec<u32>, Vec<f64>>,
        chosen: Vec<Vec<u32>>,
        out: BruteForce,
    }

    impl Search<'_> {
        fn children(&mut self, path: &[u32]) -> Vec<Vec<u32>> {
            if path.len() >= self.max_depth {
                return Vec::new();
            }
            let family = self.family;
            let probs = self
                .dists
                .entry(path.to_vec())
                .or_insert_with(|| family.distribution_at(path).p().probs().to_vec());
            (0..probs.len() as u32)
                .filter(|&i| probs[i as usize] > 0.0)
                .map(|i| {
                    let mut c = path.to_vec();
                    c.push(i);
                    c
                })
                .collect()
        }

        fn prob(&mut self, path: &[u32]) -> f64 {
            let mut p = 1.0;
            for d in 0..path.len() {
                let family = self.family;
                let probs = self
                    .dists
                    .entry(path[..d].to_vec())
                    .or_insert_with(|| family.distribution_at(&path[..d]).p().probs().to_vec());
                p *= probs[path[d] as usize];
            }
            p
        }

        fn visit(&mut self, candidates: &[Vec<u32>]) {
            self.out.subtrees += 1;
            let value: f64 = self.chosen.clone().iter().map(|v| self.prob(v)).sum();
            if value > self.out.best_value {
                self.out.best_value = value;
                self.out.best_tree = self.chosen.clone();
            }
            if self.chosen.len() >= self.cap {
                return;
            }
            for (i, c) in candidates.iter().enumerate() {
                let mut next = candidates[i + 1..].to_vec();
                next.extend(self.children(c));
                self.chosen.push(c.clone());
                self.visit(&next);
                self.chosen.pop();
            }
        }
    }

    let mut s = Search {
        family,
        cap: p_capacity.max(1) as usize,
        max_depth: max_depth as usize,
        dists: HashMap::new(),
        chosen: vec![Vec::new()],
        out: BruteForce {
            subtrees: 0,
            best_value: f64::NEG_INFINITY,
            best_tree: Vec::new(),
        },
    };
    let root_children = s.children(&[]);
    s.visit(&root_children);
    s.out
}

/// All node probabilities within `max_depth`, by breadth-first expansion,
/// and the widest distribution met on the way.
fn all_probs(family: &Family, max_depth: u32) -> (Vec<f64>, usize) {
    let mut out = vec![1.0];
    let mut widest = family.distribution_at(&[]).p().len();
    let mut layer: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 1.0)];
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for (path, p) in &layer {
            let dist = family.distribution_at(path);
            widest = widest.max(dist.p().len());
            for (i, &b) in dist.p().probs().iter().enumerate() {
                let mut c = path.clone();
                c.push(i as u32);
                out.push(p * b);
                next.push((c, p * b));
            }
        }
        layer = next;
    }
    (out, widest)
}

/// The optimal tree equals the exhaustive optimum and holds the `P` most
/// probable nodes.
///
/// `max_depth` defaults to `P − 1`, which admits every tree of `P` nodes.
pub fn check_optimal_bruteforce(
    family: &Family,
    p_capacity: u64,
    vocab: usize,
    max_depth: Option<u32>,
) -> Result<CheckReport> {
    if !(1..=3).contains(&vocab) || !(1..=8).contains(&p_capacity) {
        return Err(Error::InvalidParams(format!(
            "brute force needs vocab ≤ 3 and 1 ≤ P ≤ 8, got vocab={vocab}, P={p_capacity}"
        )));
    }
    let depth = max_depth.unwrap_or(p_capacity as u32 - 1);
    if depth > 7 {
        return Err(Error::InvalidParams(format!("max_depth {depth} exceeds 7")));
    }
    let mut report = CheckReport::new("bruteforce", family, 1);
    let brute = exhaustive_optimum(family, p_capacity, depth);
    let (probs, widest) = all_probs(family, depth);
    if widest > vocab {
        return Err(Error::InvalidParams(format!("family support {widest} exceeds vocab {vocab}")));
    }

    let tree = if depth + 1 >= p_capacity as u32 {
        draft_optimal(family, p_capacity)?
    } else {
        draft(
            TokenTree::new(family),
            p_capacity,
            Keying::Verifier,
            DraftConstraints {
                max_depth: Some(depth),
                max_width: None,
            },
        )?
    };
    report.items.push(CheckItem::new(
        format!("optimal value P={p_capacity} (over {} subtrees)", brute.subtrees),
        Relation::Equal,
        (tree.expected_accepted(), 0.0),
        (brute.best_value, 0.0),
    ));

    let mut sorted = probs;
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = (p_capacity as usize).min(sorted.len());
    let kth = sorted[k - 1];
    let tol = EXACT_TOLERANCE * kth.max(1e-300);
    let mut tree_probs: Vec<f64> = tree.nodes().iter().map(|n| n.node.prob).collect();
    tree_probs.sort_by(|a, b| b.total_cmp(a));
    let top_ok = tree_probs.len() == k
        && tree_probs.iter().all(|&p| p >= kth - tol)
        && sorted.iter().filter(|&&p| p > kth + tol).count() <= tree_probs.iter().filter(|&&p| p > kth + tol).count();
    report.items.push(CheckItem {
        name: "tree holds the P most probable nodes".into(),
        relation: Relation::Equal,
        lhs: tree_probs.last().copied().unwrap_or(0.0),
        lhs_stderr: 0.0,
        rhs: kth,
        rhs_stderr: 0.0,
        z: 0.0,
        pass: top_ok,
    });
    Ok(report.finish())
}

/// `E[T_P]` over a capacity grid. Each realization is enumerated once to the
/// largest `P`, so the sequence is pathwise monotone.
pub fn check_tp_trend(family: &Family, p_grid: &[u64], trials: u64) -> Result<CheckReport> {
    gate_non_arithmetic(family)?;
    if trials == 0 || p_grid.is_empty() || p_grid.contains(&0) {
        return Err(Error::InvalidParams("need trials and a grid of positive capacities".into()));
    }
    let p_max = *p_grid.iter().max().expect("nonempty grid");
    let mut report = CheckReport::new("tp-trend", family, trials);
    let runs: Vec<Option<Vec<f64>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let nodes = realization(family, TAG_TP, i)
                .enumerate_lowest(p_max, DEFAULT_BUDGET)
                .ok()?;
            Some(p_grid.iter().map(|&p| nodes[p as usize - 1].value).collect())
        })
        .collect();
    report.truncated = runs.iter().filter(|r| r.is_none()).count() as u64;
    let runs: Vec<Vec<f64>> = runs.into_iter().flatten().collect();

    let mut prev: Option<(u64, MeanAccumulator)> = None;
    for (j, &p) in p_grid.iter().enumerate() {
        let acc: MeanAccumulator = runs.iter().map(|r| r[j]).collect();
        if p >= 3 {
            let lnp = (p as f64).ln();
            report.items.push(CheckItem::new(
                format!("E[T_{p}] vs ln P - ln ln P"),
                Relation::Info,
                (acc.mean(), acc.stderr()),
                (lnp - lnp.ln(), 0.0),
            ));
        }
        if p == 1 {
            report.items.push(CheckItem::new("E[T_1] = 0", Relation::Equal, (acc.mean(), 0.0), (0.0, 0.0)));
        }
        if let Some((pp, pa)) = &prev {
            if p >= *pp {
                report.items.push(CheckItem {
                    name: format!("E[T_{p}] >= E[T_{pp}]"),
                    relation: Relation::AtLeast,
                    lhs: acc.mean(),
                    lhs_stderr: acc.stderr(),
                    rhs: pa.mean(),
                    rhs_stderr: pa.stderr(),
                    z: 0.0,
                    pass: acc.mean() >= pa.mean(),
                });
            }
        }
        prev = Some((p, acc));
    }
    Ok(report.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    ManyToOne,
    Renewal,
    ClaimNt,
    Frontier,
    Bruteforce,
    TpTrend,
    All,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::ManyToOne,
        Suite::Renewal,
        Suite::ClaimNt,
        Suite::Frontier,
        Suite::Bruteforce,
        Suite::TpTrend,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::ManyToOne => "many-to-one",
            Suite::Renewal => "renewal",
            Suite::ClaimNt => "claim-nt",
            Suite::Frontier => "frontier",
            Suite::Bruteforce => "bruteforce",
            Suite::TpTrend => "tp-trend",
            Suite::All => "all",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown suite `{s}`")))
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn roster_family(spec: FamilySpec, seed: u64) -> Family {
    Family::from_spec(FamilySpec { seed, ..spec }).expect("roster families are valid")
}

/// Runs a suite on the built-in roster.
///
/// `trials` sets the Monte Carlo size of the statistical checks.
pub fn run_suite(suite: Suite, seed: u64, trials: u64) -> Result<Vec<CheckReport>> {
    let uniform2 = roster_family(FamilySpec::uniform(2), seed);
    let fixed73 = roster_family(FamilySpec::fixed(&[0.7, 0.3]), seed);
    let fixed3 = roster_family(FamilySpec::fixed(&[0.5, 0.3, 0.2]), seed);
    let dir8 = roster_family(FamilySpec::dirichlet(1.0, 8, seed), seed);
    let dir16 = roster_family(FamilySpec::dirichlet(0.5, 16, seed), seed);
    let dir3 = roster_family(FamilySpec::dirichlet(1.0, 3, seed), seed);
    let ln2 = std::f64::consts::LN_2;
    let cap = DEFAULT_BUDGET;

    let mut out = Vec::new();
    let suites: Vec<Suite> = if suite == Suite::All { Suite::ALL.to_vec() } else { vec![suite] };
    for s in suites {
        match s {
            Suite::ManyToOne => {
                out.push(check_many_to_one(&uniform2, 2, 2.0 * ln2, trials.min(100), cap)?);
                out.push(check_many_to_one(&fixed73, 1, 1.0, trials, cap)?);
                for depth in 1..=4 {
                    out.push(check_many_to_one(&dir8, depth, 2.0, trials, cap)?);
                }
            }
            Suite::Renewal => {
                out.push(check_renewal(&fixed73, &[0.0, 5.0], trials)?);
                out.push(check_renewal(&dir8, &[0.5, 1.0, 2.0, 4.0], trials)?);
            }
            Suite::ClaimNt => {
                out.push(check_claim_nt(&uniform2, 2.0 * ln2, trials.min(100), cap)?);
                out.push(check_claim_nt(&fixed73, 1.1, trials, cap)?);
                out.push(check_claim_nt(&dir8, 0.0, trials.min(100), cap)?);
                out.push(check_claim_nt(&dir8, 2.0, trials, cap)?);
            }
            Suite::Frontier => {
                out.push(check_frontier_mass(&fixed73, 1, 1)?);
                out.push(check_frontier_mass(&uniform2, 7, 1)?);
                out.push(check_frontier_mass(&dir16, 64, trials.min(2000))?);
            }
            Suite::Bruteforce => {
                out.push(check_optimal_bruteforce(&fixed73, 4, 2, None)?);
                out.push(check_optimal_bruteforce(&fixed73, 1, 2, None)?);
                out.push(check_optimal_bruteforce(&uniform2, 3, 2, None)?);
                out.push(check_optimal_bruteforce(&fixed3, 8, 3, None)?);
                out.push(check_optimal_bruteforce(&dir3, 8, 3, None)?);
            }
            Suite::TpTrend => {
                out.push(check_tp_trend(&dir8, &[1, 4, 16, 64, 256], trials.min(5000))?);
            }
            Suite::All => unreachable!("expanded above"),
        }
    }
    Ok(out)
}

/// Runs a suite on one family with the default grids. Families that do not
/// meet a check's preconditions are refused with that check's error.
pub fn run_suite_for(suite: Suite, family: &Family, trials: u64) -> Result<Vec<CheckReport>> {
    let suites: Vec<Suite> = if suite == Suite::All { Suite::ALL.to_vec() } else { vec![suite] };
    let cap = DEFAULT_BUDGET;
    let mut out = Vec::new();
    for s in suites {
        match s {
            Suite::ManyToOne => {
                for depth in 1..=4 {
                    out.push(check_many_to_one(family, depth, 2.0, trials, cap)?);
                }
            }
            Suite::Renewal => out.push(check_renewal(family, &[0.5, 1.0, 2.0, 4.0], trials)?),
            Suite::ClaimNt => {
                for t in [0.0, 1.0, 2.0] {
                    out.push(check_claim_nt(family, t, trials, cap)?);
                }
            }
            Suite::Frontier => {
                for p in [1, 7, 64] {
                    out.push(check_frontier_mass(family, p, trials.min(2000))?);
                }
            }
            Suite::Bruteforce => {
                for p in 1..=8 {
                    out.push(check_optimal_bruteforce(family, p, 3, None)?);
                }
            }
            Suite::TpTrend => out.push(check_tp_trend(family, &[1, 4, 16, 64, 256], trials.min(5000))?),
            Suite::All => unreachable!("expanded above"),
        }
    }
    Ok(out)
}

/// Plain-text summary, one line per item.
pub fn render_table(reports: &[CheckReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:<28} {:<44} {:>13} {:>13} {:>8}  result",
        "check", "family", "item", "lhs", "rhs", "z"
    );
    for r in reports {
        for i in &r.items {
            let verdict = match (i.relation, i.pass) {
                (Relation::Info, _) => "info",
                (_, true) => "pass",
                (_, false) => "FAIL",
            };
            let _ = writeln!(
                s,
                "{:<12} {:<28} {:<44} {:>13.6} {:>13.6} {:>8.3}  {verdict}",
                r.check,
                truncate(&r.family, 28),
                truncate(&i.name, 44),
                i.lhs,
                i.rhs,
                i.z
            );
        }
        if r.truncated > 0 {
            let _ = writeln!(s, "{:<12} {} realizations truncated: FAIL", r.check, r.truncated);
        }
    }
    s
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        s.chars().take(n - 1).chain(['~']).collect()
    }
}
