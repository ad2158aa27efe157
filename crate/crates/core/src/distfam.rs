//! Per-node child distributions.
//!
//! A [`Family`] is the point process of the branching random walk: every node
//! of the token tree draws its child distribution i.i.d. from it. Draws are
//! keyed by the node's path hash (see [`crate::seed`]), which makes a lazily
//! expanded tree a consistent random object.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::MomentParams;
use crate::seed::{self, stream};
use crate::stats::MeanAccumulator;
use crate::{Error, Result};

/// Entries below this probability are dropped and the rest renormalized.
pub const TRUNCATION_FLOOR: f64 = 1e-12;
/// Allowed deviation of a probability vector's sum from one.
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Largest vocabulary accepted for dirichlet families.
pub const MAX_DIRICHLET_VOCAB: usize = 1024;

/// A probability vector over child tokens, sorted descending, with every
/// stored entry at least [`TRUNCATION_FLOOR`]. The child index of a token is
/// its rank in this order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Validates a probability vector: entries in [0, 1], sum within
    /// [`SUM_TOLERANCE`] of one. The result is sorted and truncated.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_entries(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Self::from_weights(probs)
            .ok_or_else(|| Error::InvalidDistribution("no positive probability".into()))
    }

    /// Normalizes nonnegative weights. Returns `None` if nothing survives
    /// truncation.
    pub(crate) fn from_weights(mut weights: Vec<f64>) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return None;
        }
        weights.iter_mut().for_each(|w| *w /= total);
        weights.retain(|&w| w >= TRUNCATION_FLOOR);
        weights.sort_by(|a, b| b.total_cmp(a));
        let kept: f64 = weights.iter().sum();
        if kept <= 0.0 {
            return None;
        }
        if kept != 1.0 {
            weights.iter_mut().for_each(|w| *w /= kept);
        }
        Some(Self { probs: weights })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }

    pub fn is_point_mass(&self) -> bool {
        self.support_size() == 1
    }

    pub fn entropy(&self) -> f64 {
        functionals(&self.probs, None).entropy
    }

    pub fn second_log_moment(&self) -> f64 {
        functionals(&self.probs, None).second_log_moment
    }

    /// Samples a child index with probability equal to its entry.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        sample_categorical(&self.probs, rng)
    }
}

fn check_entries(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("empty probability vector".into()));
    }
    if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidDistribution(format!(
            "probability {bad} outside [0, 1]"
        )));
    }
    Ok(())
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u32;
        }
    }
    // rounding left a sliver above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u32
}

/// Verifier distribution `p` together with the drafter's view `q`, aligned
/// index-wise. `q` may be zero where `p` is positive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedDistribution {
    p: TokenDistribution,
    q: Vec<f64>,
}

impl PairedDistribution {
    /// Builds from raw aligned vectors. `p` must sum to one within
    /// [`SUM_TOLERANCE`]; `q` is renormalized over the entries kept for `p`.
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::InvalidDistribution(format!(
                "p has {} entries but q has {}",
                p.len(),
                q.len()
            )));
        }
        check_entries(&p)?;
        check_entries(&q)?;
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Self::from_weights(p, q)
            .ok_or_else(|| Error::InvalidDistribution("no positive probability".into()))
    }

    pub(crate) fn from_weights(p: Vec<f64>, q: Vec<f64>) -> Option<Self> {
        let total: f64 = p.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return None;
        }
        let mut pairs: Vec<(f64, f64)> = p
            .into_iter()
            .zip(q)
            .map(|(p, q)| (p / total, q))
            .filter(|&(p, _)| p >= TRUNCATION_FLOOR)
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let p_kept: f64 = pairs.iter().map(|x| x.0).sum();
        let q_kept: f64 = pairs.iter().map(|x| x.1).sum();
        let probs = pairs.iter().map(|x| x.0 / p_kept).collect();
        let q = pairs
            .iter()
            .map(|x| if q_kept > 0.0 { x.1 / q_kept } else { 0.0 })
            .collect();
        Some(Self {
            p: TokenDistribution { probs },
            q,
        })
    }

    pub fn p(&self) -> &TokenDistribution {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// p-mass of the tokens the drafter cannot propose.
    pub fn q_zero_mass(&self) -> f64 {
        functionals(self.p.probs(), Some(&self.q)).q_zero_mass.unwrap_or(0.0)
    }
}

/// The child distribution of one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum NodeDistribution {
    Single(TokenDistribution),
    Paired(PairedDistribution),
}

impl NodeDistribution {
    pub fn p(&self) -> &TokenDistribution {
        match self {
            Self::Single(d) => d,
            Self::Paired(d) => d.p(),
        }
    }

    pub fn q(&self) -> Option<&[f64]> {
        match self {
            Self::Single(_) => None,
            Self::Paired(d) => Some(d.q()),
        }
    }

    pub fn functionals(&self) -> Functionals {
        functionals(self.p().probs(), self.q())
    }
}

/// Per-distribution quantities whose means are the moment parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Functionals {
    /// `-Σ p ln p`
    pub entropy: f64,
    /// `Σ p ln² p`
    pub second_log_moment: f64,
    /// `Σ_{q=0} p`, when a drafter distribution is present.
    pub q_zero_mass: Option<f64>,
    /// `(-Σ_{q>0} p ln q) / Σ_{q>0} p`; `None` when q misses all of p's mass.
    pub cross_entropy: Option<f64>,
}

/// Evaluates [`Functionals`] with the convention `0 ln 0 = 0`.
pub fn functionals(p: &[f64], q: Option<&[f64]>) -> Functionals {
    let mut entropy = 0.0;
    let mut second = 0.0;
    for &pi in p.iter().filter(|&&pi| pi > 0.0) {
        let l = pi.ln();
        entropy -= pi * l;
        second += pi * l * l;
    }
    let (q_zero_mass, cross_entropy) = match q {
        None => (None, None),
        Some(q) => {
            let mut zero = 0.0;
            let mut hit = 0.0;
            let mut ce = 0.0;
            for (&pi, &qi) in p.iter().zip(q) {
                if pi <= 0.0 {
                    continue;
                }
                if qi > 0.0 {
                    hit += pi;
                    ce -= pi * qi.ln();
                } else {
                    zero += pi;
                }
            }
            (Some(zero), (hit > 0.0).then(|| ce / hit))
        }
    };
    Functionals {
        entropy,
        second_log_moment: second,
        q_zero_mass,
        cross_entropy,
    }
}

// ---------------------------------------------------------------------------
// Family configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_point_mass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformParams {
    pub vocab: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    pub alpha: f64,
    pub vocab: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceParams {
    pub trace: PathBuf,
}

/// Families usable as the verifier side of a `paired-noisy` family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum BaseFamily {
    Fixed(FixedParams),
    Uniform(UniformParams),
    Dirichlet(DirichletParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyParams {
    pub base: BaseFamily,
    /// `q ∝ exp((ln p + noise) / temperature)`
    pub temperature: f64,
    /// Independent per-token probability of zeroing q.
    #[serde(default)]
    pub zero_rate: f64,
    /// Standard deviation of Gaussian noise added to `ln p` before tempering.
    #[serde(default)]
    pub logit_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum FamilyKind {
    Fixed(FixedParams),
    Uniform(UniformParams),
    Dirichlet(DirichletParams),
    Empirical(TraceParams),
    PairedEmpirical(TraceParams),
    PairedNoisy(NoisyParams),
}

/// JSON form: `{"kind": "...", "params": {...}, "seed": u64}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    #[serde(flatten)]
    pub kind: FamilyKind,
    #[serde(default)]
    pub seed: u64,
}

impl FamilySpec {
    pub fn new(kind: FamilyKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    pub fn fixed(probs: &[f64]) -> Self {
        Self::new(
            FamilyKind::Fixed(FixedParams {
                probs: probs.to_vec(),
                allow_point_mass: false,
            }),
            0,
        )
    }

    pub fn uniform(vocab: usize) -> Self {
        Self::new(FamilyKind::Uniform(UniformParams { vocab }), 0)
    }

    pub fn dirichlet(alpha: f64, vocab: usize, seed: u64) -> Self {
        Self::new(FamilyKind::Dirichlet(DirichletParams { alpha, vocab }), seed)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidFamily(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Resolved family
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Source {
    Constant(TokenDistribution),
    Dirichlet { vocab: usize, gamma: Gamma<f64> },
    Empirical(Arc<Vec<TokenDistribution>>),
    PairedEmpirical(Arc<Vec<PairedDistribution>>),
    PairedNoisy {
        base: Box<Source>,
        temperature: f64,
        zero_rate: f64,
        logit_noise: f64,
    },
}

/// A validated family, ready to generate child distributions.
#[derive(Debug, Clone)]
pub struct Family {
    spec: FamilySpec,
    source: Source,
    arithmetic: bool,
}

impl Family {
    pub fn from_spec(spec: FamilySpec) -> Result<Self> {
        let source = match &spec.kind {
            FamilyKind::Fixed(p) => fixed_source(p)?,
            FamilyKind::Uniform(p) => uniform_source(p)?,
            FamilyKind::Dirichlet(p) => dirichlet_source(p)?,
            FamilyKind::Empirical(t) => {
                let records = crate::moments::ingest(&t.trace)?.records;
                let dists: Vec<_> = records
                    .into_iter()
                    .map(|r| TokenDistribution::from_weights(r.p))
                    .collect::<Option<_>>()
                    .ok_or_else(|| Error::InvalidFamily("trace record without mass".into()))?;
                if dists.iter().all(TokenDistribution::is_point_mass) {
                    return Err(Error::PointMass);
                }
                Source::Empirical(Arc::new(dists))
            }
            FamilyKind::PairedEmpirical(t) => {
                let records = crate::moments::ingest(&t.trace)?.records;
                let dists: Vec<_> = records
                    .into_iter()
                    .map(|r| {
                        let q = r.q.ok_or_else(|| {
                            Error::InvalidFamily("paired-empirical trace record without q".into())
                        })?;
                        PairedDistribution::from_weights(r.p, q)
                            .ok_or_else(|| Error::InvalidFamily("trace record without mass".into()))
                    })
                    .collect::<Result<_>>()?;
                if dists.iter().all(|d: &PairedDistribution| d.p().is_point_mass()) {
                    return Err(Error::PointMass);
                }
                Source::PairedEmpirical(Arc::new(dists))
            }
            FamilyKind::PairedNoisy(n) => {
                if !(n.temperature > 0.0 && n.temperature.is_finite()) {
                    return Err(Error::InvalidFamily("temperature must be positive".into()));
                }
                if !(0.0..1.0).contains(&n.zero_rate) {
                    return Err(Error::InvalidFamily("zero_rate must lie in [0, 1)".into()));
                }
                if !(n.logit_noise >= 0.0 && n.logit_noise.is_finite()) {
                    return Err(Error::InvalidFamily("logit_noise must be nonnegative".into()));
                }
                let base = match &n.base {
                    BaseFamily::Fixed(p) => fixed_source(p)?,
                    BaseFamily::Uniform(p) => uniform_source(p)?,
                    BaseFamily::Dirichlet(p) => dirichlet_source(p)?,
                };
                Source::PairedNoisy {
                    base: Box::new(base),
                    temperature: n.temperature,
                    zero_rate: n.zero_rate,
                    logit_noise: n.logit_noise,
                }
            }
        };
        let arithmetic = source_is_arithmetic(&source, &spec.kind);
        Ok(Self {
            spec,
            source,
            arithmetic,
        })
    }

    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.spec.seed
    }

    /// Same family with a different master seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.spec.seed = seed;
        out
    }

    pub fn is_paired(&self) -> bool {
        matches!(
            self.source,
            Source::PairedEmpirical(_) | Source::PairedNoisy { .. }
        )
    }

    /// Whether every `-ln β` the family can produce lies on a lattice `λℤ`.
    /// Renewal-limit checks refuse arithmetic families.
    pub fn is_arithmetic(&self) -> bool {
        self.arithmetic
    }

    /// Whether each node receives the same distribution.
    pub fn is_deterministic(&self) -> bool {
        match &self.source {
            Source::Constant(_) => true,
            Source::PairedNoisy {
                base,
                zero_rate,
                logit_noise,
                ..
            } => matches!(**base, Source::Constant(_)) && *zero_rate == 0.0 && *logit_noise == 0.0,
            _ => false,
        }
    }

    /// Draws one child distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeDistribution {
        sample_source(&self.source, rng)
    }

    /// Distribution at the node with the given hash key.
    pub fn distribution_for_key(&self, key: u64) -> NodeDistribution {
        match &self.source {
            Source::Constant(d) => NodeDistribution::Single(d.clone()),
            _ => self.sample(&mut seed::rng_from_key(key)),
        }
    }

    /// Child distribution of `path` in the default realization of this
    /// family's seed.
    pub fn distribution_at(&self, path: &[u32]) -> NodeDistribution {
        let root = seed::root_key(self.seed(), 0);
        self.distribution_for_key(seed::path_key(root, path))
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn base(f: &mut fmt::Formatter<'_>, b: &BaseFamily) -> fmt::Result {
            match b {
                BaseFamily::Fixed(p) => write!(f, "fixed{:?}", p.probs),
                BaseFamily::Uniform(p) => write!(f, "uniform(V={})", p.vocab),
                BaseFamily::Dirichlet(p) => write!(f, "dirichlet(alpha={},V={})", p.alpha, p.vocab),
            }
        }
        match &self.spec.kind {
            FamilyKind::Fixed(p) => base(f, &BaseFamily::Fixed(p.clone())),
            FamilyKind::Uniform(p) => base(f, &BaseFamily::Uniform(*p)),
            FamilyKind::Dirichlet(p) => base(f, &BaseFamily::Dirichlet(*p)),
            FamilyKind::Empirical(t) => write!(f, "empirical({})", t.trace.display()),
            FamilyKind::PairedEmpirical(t) => write!(f, "paired-empirical({})", t.trace.display()),
            FamilyKind::PairedNoisy(n) => {
                write!(f, "paired-noisy(")?;
                base(f, &n.base)?;
                write!(
                    f,
                    ",T={},zero={},noise={})",
                    n.temperature, n.zero_rate, n.logit_noise
                )
            }
        }
    }
}

fn fixed_source(p: &FixedParams) -> Result<Source> {
    let d = TokenDistribution::new(p.probs.clone())?;
    if d.is_point_mass() && !p.allow_point_mass {
        return Err(Error::PointMass);
    }
    Ok(Source::Constant(d))
}

fn uniform_source(p: &UniformParams) -> Result<Source> {
    if p.vocab < 2 {
        return Err(Error::InvalidFamily("uniform family needs vocab >= 2".into()));
    }
    Ok(Source::Constant(TokenDistribution {
        probs: vec![1.0 / p.vocab as f64; p.vocab],
    }))
}

fn dirichlet_source(p: &DirichletParams) -> Result<Source> {
    if p.vocab < 2 || p.vocab > MAX_DIRICHLET_VOCAB {
        return Err(Error::InvalidFamily(format!(
            "dirichlet vocab must lie in [2, {MAX_DIRICHLET_VOCAB}], got {}",
            p.vocab
        )));
    }
    let gamma = Gamma::new(p.alpha, 1.0)
        .map_err(|e| Error::InvalidFamily(format!("dirichlet alpha {}: {e}", p.alpha)))?;
    Ok(Source::Dirichlet {
        vocab: p.vocab,
        gamma,
    })
}

fn sample_source<R: Rng + ?Sized>(source: &Source, rng: &mut R) -> NodeDistribution {
    match source {
        Source::Constant(d) => NodeDistribution::Single(d.clone()),
        Source::Dirichlet { vocab, gamma } => loop {
            let weights: Vec<f64> = (0..*vocab).map(|_| gamma.sample(rng)).collect();
            // tiny alpha can underflow every gamma draw; redraw
            if let Some(d) = TokenDistribution::from_weights(weights) {
                break NodeDistribution::Single(d);
            }
        },
        Source::Empirical(records) => {
            NodeDistribution::Single(records[rng.random_range(0..records.len())].clone())
        }
        Source::PairedEmpirical(records) => {
            NodeDistribution::Paired(records[rng.random_range(0..records.len())].clone())
        }
        Source::PairedNoisy {
            base,
            temperature,
            zero_rate,
            logit_noise,
        } => {
            let p = sample_source(base, rng).p().clone();
            let logits: Vec<f64> = p
                .probs()
                .iter()
                .map(|&pi| {
                    let noise = if *logit_noise > 0.0 {
                        logit_noise * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    (pi.ln() + noise) / temperature
                })
                .collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut q: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            if *zero_rate > 0.0 {
                let keep: Vec<bool> = q.iter().map(|_| rng.random::<f64>() >= *zero_rate).collect();
                if keep.iter().any(|&k| k) {
                    q.iter_mut().zip(&keep).filter(|(_, k)| !**k).for_each(|(x, _)| *x = 0.0);
                } else {
                    // never zero everything: keep the drafter's favourite
                    let best = argmax(&q);
                    q.iter_mut().enumerate().filter(|(i, _)| *i != best).for_each(|(_, x)| *x = 0.0);
                }
            }
            let total: f64 = q.iter().sum();
            q.iter_mut().for_each(|x| *x /= total);
            NodeDistribution::Paired(PairedDistribution { p, q })
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(i, _)| i)
}

fn source_is_arithmetic(source: &Source, kind: &FamilyKind) -> bool {
    match source {
        Source::Constant(d) => lattice_values(d.probs()),
        Source::Dirichlet { .. } => false,
        Source::Empirical(records) => {
            let values: Vec<f64> = records.iter().flat_map(|d| d.probs().iter().copied()).collect();
            lattice_values(&values)
        }
        Source::PairedEmpirical(records) => {
            let values: Vec<f64> = records
                .iter()
                .flat_map(|d| d.p().probs().iter().copied())
                .collect();
            lattice_values(&values)
        }
        Source::PairedNoisy { base, .. } => source_is_arithmetic(base, kind),
    }
}

/// True when all `-ln p` lie on a common lattice `λℤ` (up to 1e-9 relative
/// error, with denominators at most 64 relative to the smallest value).
fn lattice_values(probs: &[f64]) -> bool {
    let mut logs: Vec<f64> = probs
        .iter()
        .filter(|&&p| p > 0.0 && p < 1.0)
        .map(|p| -p.ln())
        .collect();
    if logs.is_empty() {
        return true;
    }
    logs.sort_by(f64::total_cmp);
    logs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    if logs.len() > 4096 {
        return false;
    }
    let base = logs[0];
    let mut lcm: u64 = 1;
    for &x in &logs[1..] {
        let ratio = x / base;
        let Some(den) = (1..=64u64).find(|&d| {
            let r = ratio * d as f64;
            (r - r.round()).abs() <= 1e-9 * r
        }) else {
            return false;
        };
        lcm = lcm / gcd(lcm, den) * den;
        if lcm > 1 << 20 {
            return false;
        }
    }
    true
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Estimates the moment parameters of a family.
///
/// Deterministic and empirical families are evaluated exactly (standard
/// error zero); the rest by Monte Carlo over `n_samples` draws from a stream
/// derived from the family seed.
pub fn family_moments(family: &Family, n_samples: u64) -> MomentParams {
    match &family.source {
        Source::Empirical(records) => {
            let f: Vec<_> = records.iter().map(|d| functionals(d.probs(), None)).collect();
            exact_mean_moments(&f)
        }
        Source::PairedEmpirical(records) => {
            let f: Vec<_> = records
                .iter()
                .map(|d| functionals(d.p().probs(), Some(d.q())))
                .collect();
            exact_mean_moments(&f)
        }
        _ if family.is_deterministic() => {
            let mut rng = seed::rng_from_key(0);
            let f = family.sample(&mut rng).functionals();
            exact_mean_moments(&[f])
        }
        _ => {
            let mut rng = seed::rng_from_key(seed::derive(family.seed(), &[stream::MOMENTS]));
            let mut acc = MomentAccumulators::default();
            for _ in 0..n_samples.max(1) {
                acc.push(&family.sample(&mut rng).functionals());
            }
            acc.finish(false)
        }
    }
}

fn exact_mean_moments(f: &[Functionals]) -> MomentParams {
    let mut acc = MomentAccumulators::default();
    f.iter().for_each(|x| acc.push(x));
    acc.finish(true)
}

/// Streaming means of [`Functionals`].
#[derive(Debug, Clone, Default)]
pub(crate) struct MomentAccumulators {
    pub entropy: MeanAccumulator,
    pub second: MeanAccumulator,
    pub q_zero: MeanAccumulator,
    pub cross_entropy: MeanAccumulator,
}

impl MomentAccumulators {
    pub fn push(&mut self, f: &Functionals) {
        self.entropy.push(f.entropy);
        self.second.push(f.second_log_moment);
        if let Some(z) = f.q_zero_mass {
            self.q_zero.push(z);
        }
        if let Some(ce) = f.cross_entropy {
            self.cross_entropy.push(ce);
        }
    }

    pub fn finish(&self, exact: bool) -> MomentParams {
        let se = |a: &MeanAccumulator| if exact { 0.0 } else { a.stderr() };
        let paired = self.q_zero.count() > 0;
        MomentParams {
            mu: self.entropy.mean(),
            mu2: self.second.mean(),
            mu_ce: (self.cross_entropy.count() > 0).then(|| self.cross_entropy.mean()),
            pr_q_zero: paired.then(|| self.q_zero.mean()),
            stderr_mu: se(&self.entropy),
            stderr_mu2: se(&self.second),
            stderr_mu_ce: (self.cross_entropy.count() > 0).then(|| se(&self.cross_entropy)),
            stderr_pr_q_zero: paired.then(|| se(&self.q_zero)),
            n_samples: self.entropy.count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;

    use super::*;

    fn fam(spec: FamilySpec) -> Family {
        Family::from_spec(spec).unwrap()
    }

    fn noisy(base: BaseFamily, temperature: f64, zero_rate: f64, noise: f64) -> FamilySpec {
        FamilySpec::new(
            FamilyKind::PairedNoisy(NoisyParams {
                base,
                temperature,
                zero_rate,
                logit_noise: noise,
            }),
            11,
        )
    }

    #[test]
    fn uniform_and_fixed_ignore_node() {
        let u = fam(FamilySpec::uniform(2));
        assert_eq!(u.distribution_at(&[]).p().probs(), &[0.5, 0.5]);
        assert_eq!(u.distribution_at(&[1, 0, 1]).p().probs(), &[0.5, 0.5]);
        let f = fam(FamilySpec::fixed(&[0.7, 0.3]));
        assert_eq!(f.distribution_at(&[0, 0]).p().probs(), &[0.7, 0.3]);
    }

    #[test]
    fn fixed_is_sorted_descending() {
        let f = fam(FamilySpec::fixed(&[0.2, 0.5, 0.3]));
        assert_eq!(f.distribution_at(&[]).p().probs(), &[0.5, 0.3, 0.2]);
    }

    #[test]
    fn dirichlet_is_deterministic_per_node() {
        let f = fam(FamilySpec::dirichlet(1.0, 4, 99));
        let a = f.distribution_at(&[2, 1]);
        let _ = f.distribution_at(&[0]);
        let b = f.distribution_at(&[2, 1]);
        assert_eq!(a, b);
        assert_ne!(a, f.distribution_at(&[1, 2]));
        let s: f64 = a.p().probs().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(a.p().probs().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn point_mass_needs_override() {
        assert!(matches!(
            Family::from_spec(FamilySpec::fixed(&[1.0])),
            Err(Error::PointMass)
        ));
        let spec = FamilySpec::new(
            FamilyKind::Fixed(FixedParams {
                probs: vec![1.0, 0.0],
                allow_point_mass: true,
            }),
            0,
        );
        assert!(Family::from_spec(spec).is_ok());
    }

    #[test]
    fn invalid_families_rejected() {
        assert!(Family::from_spec(FamilySpec::uniform(1)).is_err());
        assert!(Family::from_spec(FamilySpec::dirichlet(1.0, 1, 0)).is_err());
        assert!(Family::from_spec(FamilySpec::dirichlet(1.0, 2048, 0)).is_err());
        assert!(Family::from_spec(FamilySpec::dirichlet(0.0, 4, 0)).is_err());
        assert!(Family::from_spec(FamilySpec::fixed(&[0.6, 0.3])).is_err());
        assert!(Family::from_spec(FamilySpec::fixed(&[1.2, -0.2])).is_err());
    }

    #[test]
    fn json_schema_round_trip() {
        let text = r#"{"kind":"dirichlet","params":{"alpha":0.5,"vocab":16},"seed":7}"#;
        let spec = FamilySpec::from_json(text).unwrap();
        assert_eq!(spec, FamilySpec::dirichlet(0.5, 16, 7));
        let nested = r#"{"kind":"paired-noisy","params":{"base":{"kind":"fixed","params":{"probs":[0.7,0.3]}},"temperature":1.5},"seed":3}"#;
        let spec = FamilySpec::from_json(nested).unwrap();
        let FamilyKind::PairedNoisy(n) = &spec.kind else {
            panic!("wrong kind")
        };
        assert_eq!(n.zero_rate, 0.0);
        let back: FamilySpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn uniform_moments_exact() {
        let m = family_moments(&fam(FamilySpec::uniform(2)), 10);
        assert!((m.mu - LN_2).abs() < 1e-15);
        assert!((m.mu2 - LN_2 * LN_2).abs() < 1e-15);
        assert_eq!(m.stderr_mu, 0.0);
    }

    #[test]
    fn fixed_entropy() {
        let m = family_moments(&fam(FamilySpec::fixed(&[0.7, 0.3])), 10);
        // -0.7 ln 0.7 - 0.3 ln 0.3 = 0.6108643020548935
        assert!((m.mu - 0.610_864_302_054_893_5).abs() < 1e-12);
    }

    #[test]
    fn paired_zero_mass() {
        let d = PairedDistribution::new(vec![0.7, 0.3], vec![1.0, 0.0]).unwrap();
        assert!((d.q_zero_mass() - 0.3).abs() < 1e-15);
        let f = functionals(d.p().probs(), Some(d.q()));
        assert_eq!(f.cross_entropy, Some(0.0));
    }

    #[test]
    fn noisy_with_identity_q_matches_p() {
        let base = BaseFamily::Fixed(FixedParams {
            probs: vec![0.7, 0.3],
            allow_point_mass: false,
        });
        let f = fam(noisy(base, 1.0, 0.0, 0.0));
        assert!(f.is_paired() && f.is_deterministic());
        let d = f.distribution_at(&[]);
        let q = d.q().unwrap();
        assert!((q[0] - 0.7).abs() < 1e-12 && (q[1] - 0.3).abs() < 1e-12);
        let m = family_moments(&f, 1);
        assert!((m.mu_ce.unwrap() - m.mu).abs() < 1e-12);
        assert_eq!(m.pr_q_zero, Some(0.0));
    }

    #[test]
    fn noisy_zero_rate_never_empties_q() {
        let base = BaseFamily::Uniform(UniformParams { vocab: 3 });
        let f = fam(noisy(base, 1.0, 0.95, 0.0));
        for i in 0..200u32 {
            let d = f.distribution_at(&[i]);
            let q = d.q().unwrap();
            let s: f64 = q.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn arithmetic_flags() {
        assert!(fam(FamilySpec::uniform(2)).is_arithmetic());
        assert!(fam(FamilySpec::uniform(5)).is_arithmetic());
        assert!(fam(FamilySpec::fixed(&[0.5, 0.25, 0.25])).is_arithmetic());
        assert!(!fam(FamilySpec::fixed(&[0.7, 0.3])).is_arithmetic());
        assert!(!fam(FamilySpec::fixed(&[0.5, 0.3, 0.2])).is_arithmetic());
        assert!(!fam(FamilySpec::dirichlet(1.0, 8, 0)).is_arithmetic());
    }

    #[test]
    fn dirichlet_stderr_shrinks_like_inverse_sqrt() {
        let f = fam(FamilySpec::dirichlet(1.0, 8, 5));
        let se: Vec<f64> = [1_000u64, 10_000, 100_000]
            .iter()
            .map(|&n| family_moments(&f, n).stderr_mu)
            .collect();
        for w in se.windows(2) {
            let ratio = w[0] / w[1];
            let expected = 10f64.sqrt();
            assert!(ratio > expected / 2.0 && ratio < expected * 2.0, "ratio {ratio}");
        }
    }
}
