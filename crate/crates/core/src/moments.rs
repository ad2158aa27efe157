//! Moment estimation from log-probability traces.
//!
//! A trace is line-delimited JSON, one next-token distribution per line:
//!
//! ```text
//! {"p": [0.61, 0.2, ...], "q": [0.5, 0.3, ...], "meta": {"dataset": "gsm8k"}}
//! ```
//!
//! `p` is the verifier's distribution (top-k probabilities suffice; token
//! identities are not needed), `q` the optional drafter distribution aligned
//! index-wise with `p`, and `meta` free-form. Statistics are averaged
//! uniformly over records.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::MomentParams;
use crate::distfam::{functionals, Family, MomentAccumulators, NodeDistribution};
use crate::seed::{self, stream};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
/// A record's `p` must sum to one within this tolerance before renormalization.
pub const SUM_TOLERANCE: f64 = 1e-3;
/// Fraction of malformed lines above which ingestion fails.
pub const MALFORMED_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub p: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl TraceRecord {
    pub fn from_distribution(dist: &NodeDistribution) -> Self {
        Self {
            p: dist.p().probs().to_vec(),
            q: dist.q().map(<[f64]>::to_vec),
            meta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Entries of `p` below this are dropped before renormalizing.
    pub min_prob: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { min_prob: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedLine {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub records: Vec<TraceRecord>,
    /// Nonblank lines read.
    pub lines: u64,
    pub malformed: Vec<MalformedLine>,
    /// Records whose `p` did not sum exactly to one.
    pub renormalized: u64,
    /// Largest `|1 − Σp|` seen before renormalization.
    pub max_mass_deficit: f64,
    pub options: IngestOptions,
}

/// Validates and normalizes one parsed record.
///
/// `p` is sorted descending (with `q` permuted alongside), entries below
/// `min_prob` are dropped and `p` is renormalized. `q` is validated but kept
/// as given: a sum below one means drafter mass outside `p`'s listed support.
pub fn normalize_record(
    mut rec: TraceRecord,
    opts: &IngestOptions,
) -> std::result::Result<(TraceRecord, f64), String> {
    if rec.p.is_empty() {
        return Err("empty p".into());
    }
    if let Some(bad) = rec.p.iter().find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0 + SUM_TOLERANCE) {
        return Err(format!("p entry {bad} is not a probability"));
    }
    let sum: f64 = rec.p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(format!("p sums to {sum}"));
    }
    if let Some(q) = &rec.q {
        if q.len() != rec.p.len() {
            return Err(format!("q has {} entries but p has {}", q.len(), rec.p.len()));
        }
        if let Some(bad) = q.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(format!("q entry {bad} is not a probability"));
        }
        let qs: f64 = q.iter().sum();
        if qs > 1.0 + SUM_TOLERANCE {
            return Err(format!("q sums to {qs}"));
        }
    }

    let mut idx: Vec<usize> = (0..rec.p.len())
        .filter(|&i| rec.p[i] > 0.0 && rec.p[i] >= opts.min_prob)
        .collect();
    if idx.is_empty() {
        return Err("no p entry survives min_prob".into());
    }
    idx.sort_by(|&a, &b| rec.p[b].total_cmp(&rec.p[a]));
    let kept: f64 = idx.iter().map(|&i| rec.p[i]).sum();
    let p = idx.iter().map(|&i| rec.p[i] / kept).collect();
    let q = rec.q.take().map(|q| idx.iter().map(|&i| q[i]).collect());
    Ok((TraceRecord { p, q, meta: rec.meta }, (1.0 - kept).abs()))
}

/// Reads and validates a whole trace.
pub fn parse_trace<R: BufRead>(reader: R, opts: IngestOptions, origin: &Path) -> Result<Ingested> {
    let trace_err = |message: String| Error::Trace {
        path: origin.to_path_buf(),
        message,
    };
    let mut out = Ingested {
        records: Vec::new(),
        lines: 0,
        malformed: Vec::new(),
        renormalized: 0,
        max_mass_deficit: 0.0,
        options: opts,
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            path: origin.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.lines += 1;
        let parsed = serde_json::from_str::<TraceRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| normalize_record(r, &opts));
        match parsed {
            Ok((rec, deficit)) => {
                if deficit > 1e-12 {
                    out.renormalized += 1;
                }
                out.max_mass_deficit = out.max_mass_deficit.max(deficit);
                out.records.push(rec);
            }
            Err(reason) => out.malformed.push(MalformedLine {
                line: i as u64 + 1,
                reason,
            }),
        }
    }
    if out.lines == 0 {
        return Err(trace_err("empty trace".into()));
    }
    if out.malformed.len() as f64 > MALFORMED_LIMIT * out.lines as f64 || out.records.is_empty() {
        let shown: Vec<String> = out
            .malformed
            .iter()
            .take(10)
            .map(|m| format!("line {}: {}", m.line, m.reason))
            .collect();
        return Err(trace_err(format!(
            "{} of {} lines malformed (limit {}%): {}",
            out.malformed.len(),
            out.lines,
            MALFORMED_LIMIT * 100.0,
            shown.join("; ")
        )));
    }
    Ok(out)
}

pub fn ingest(path: &Path) -> Result<Ingested> {
    ingest_with(path, IngestOptions::default())
}

pub fn ingest_with(path: &Path, opts: IngestOptions) -> Result<Ingested> {
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_trace(BufReader::new(file), opts, path)
}

/// Per-record means of entropy, second log-moment, q-miss mass and
/// conditional cross-entropy, with standard errors from the sample variance.
pub fn estimate<'a, I>(records: I) -> Result<MomentParams>
where
    I: IntoIterator<Item = &'a TraceRecord>,
{
    let mut acc = MomentAccumulators::default();
    for r in records {
        acc.push(&functionals(&r.p, r.q.as_deref()));
    }
    if acc.entropy.count() == 0 {
        return Err(Error::InvalidParams("no valid trace records".into()));
    }
    Ok(acc.finish(false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationInfo {
    pub min_prob: f64,
    pub renormalized_records: u64,
    pub max_mass_deficit: f64,
}

/// The JSON document written by `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsDocument {
    pub schema_version: u32,
    pub source: PathBuf,
    pub mu: f64,
    pub mu2: f64,
    pub mu_ce: Option<f64>,
    pub pr_q_zero: Option<f64>,
    pub n_records: u64,
    pub n_paired_records: u64,
    pub stderr_mu: f64,
    pub stderr_mu2: f64,
    pub stderr_mu_ce: Option<f64>,
    pub stderr_pr_q_zero: Option<f64>,
    /// `false` when μ = 0 (every record is a point mass).
    pub valid_for_bounds: bool,
    pub truncation: TruncationInfo,
    pub malformed_lines: Vec<MalformedLine>,
}

impl MomentsDocument {
    pub fn from_ingested(source: &Path, ing: &Ingested) -> Result<Self> {
        let m = estimate(&ing.records)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            source: source.to_path_buf(),
            mu: m.mu,
            mu2: m.mu2,
            mu_ce: m.mu_ce,
            pr_q_zero: m.pr_q_zero,
            n_records: ing.records.len() as u64,
            n_paired_records: ing.records.iter().filter(|r| r.q.is_some()).count() as u64,
            stderr_mu: m.stderr_mu,
            stderr_mu2: m.stderr_mu2,
            stderr_mu_ce: m.stderr_mu_ce,
            stderr_pr_q_zero: m.stderr_pr_q_zero,
            valid_for_bounds: m.validate().is_ok(),
            truncation: TruncationInfo {
                min_prob: ing.options.min_prob,
                renormalized_records: ing.renormalized,
                max_mass_deficit: ing.max_mass_deficit,
            },
            malformed_lines: ing.malformed.clone(),
        })
    }

    pub fn params(&self) -> MomentParams {
        MomentParams {
            mu: self.mu,
            mu2: self.mu2,
            mu_ce: self.mu_ce,
            pr_q_zero: self.pr_q_zero,
            stderr_mu: self.stderr_mu,
            stderr_mu2: self.stderr_mu2,
            stderr_mu_ce: self.stderr_mu_ce,
            stderr_pr_q_zero: self.stderr_pr_q_zero,
            n_samples: self.n_records,
        }
    }
}

/// Writes `n` i.i.d. draws from `family` as a trace.
pub fn write_synthetic_trace<W: Write>(family: &Family, n: u64, seed: u64, mut out: W) -> std::io::Result<()> {
    let mut rng = seed::rng_from_key(seed::derive(seed, &[stream::TRACE]));
    for _ in 0..n {
        let rec = TraceRecord::from_distribution(&family.sample(&mut rng));
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
