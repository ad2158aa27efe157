use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use speclimit_core::distfam::family_moments;
use speclimit_core::lemma_checks::{self, CheckReport, Suite};
use speclimit_core::moments::{self, IngestOptions, MomentsDocument, SCHEMA_VERSION};
use speclimit_core::verify_sim::{run_with, DraftMode, RunConfig};
use speclimit_core::{BoundReport, DraftConstraints, Error, Family, FamilySpec, MomentParams, RunReport};

/// Speed limits of speculative decoding: bounds, simulation and checks.
#[derive(Parser)]
#[command(name = "speclimit", version)]
struct Cli {
    /// Worker threads for simulations and checks (default: all cores).
    /// Results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate moment parameters from a log-probability trace.
    Estimate(EstimateArgs),
    /// Evaluate every bound for given moments and capacity.
    Bound(BoundArgs),
    /// Simulate draft/verify iterations on a family.
    Simulate(SimulateArgs),
    /// Simulate a grid of capacities and write CSV.
    Sweep(SweepArgs),
    /// Run the lemma check suites.
    Check(CheckArgs),
    /// Write a synthetic trace drawn from a family.
    GenTrace(GenTraceArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Line-delimited JSON trace.
    trace: PathBuf,
    /// Drop entries of p below this probability before renormalizing.
    #[arg(long, default_value_t = 0.0)]
    min_prob: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    mu2: f64,
    #[arg(long, requires = "pr_q_zero")]
    mu_ce: Option<f64>,
    #[arg(long, requires = "mu_ce")]
    pr_q_zero: Option<f64>,
    /// Parallel token capacity P.
    #[arg(long = "p", short = 'p')]
    p_capacity: u64,
    /// Point for the renewal bounds (default ln P).
    #[arg(long)]
    renewal_x: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FamilyArg {
    /// Family spec: a JSON file or an inline JSON object.
    #[arg(long)]
    family: String,
    /// Draws used to estimate the family's moments for the bounds.
    #[arg(long, default_value_t = 100_000)]
    moment_samples: u64,
}

#[derive(Args)]
struct SimArgs {
    /// Tokens to generate.
    #[arg(long, default_value_t = 100_000)]
    tokens: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_depth: Option<u32>,
    #[arg(long)]
    max_width: Option<u32>,
}

impl SimArgs {
    fn constraints(&self) -> DraftConstraints {
        DraftConstraints {
            max_depth: self.max_depth,
            max_width: self.max_width,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    family: FamilyArg,
    #[arg(long = "p", short = 'p')]
    p_capacity: u64,
    #[arg(long, default_value_t = DraftMode::Full)]
    mode: DraftMode,
    #[command(flatten)]
    sim: SimArgs,
    /// Verifier latency per call, for the human-readable timing line only.
    #[arg(long)]
    verifier_latency_ms: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    family: FamilyArg,
    /// Ascending capacities, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128,256,512,1024")]
    p_grid: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "full")]
    modes: Vec<DraftMode>,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// many-to-one, renewal, claim-nt, frontier, bruteforce, tp-trend or all.
    #[arg(long, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo size of the statistical checks.
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    /// Run on this family instead of the built-in roster.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenTraceArgs {
    #[arg(long)]
    family: String,
    #[arg(long, default_value_t = 10_000)]
    records: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Why a command stopped; maps to the exit code.
enum Failure {
    Checks,
    Truncated,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Bound(a) => bound(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Check(a) => check(a),
        Command::GenTrace(a) => gen_trace(a),
    };
    match result {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Failure::Checks)) => ExitCode::from(1),
        Ok(Some(Failure::Truncated)) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            let truncated = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Truncated { .. })));
            ExitCode::from(if truncated { 3 } else { 2 })
        }
    }
}

type Outcome = anyhow::Result<Option<Failure>>;

fn load_family(arg: &str) -> anyhow::Result<Family> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading family spec {arg}"))?
    };
    let spec = FamilySpec::from_json(&text)?;
    Ok(Family::from_spec(spec)?)
}

fn open_out(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let mut out = open_out(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn estimate(a: EstimateArgs) -> Outcome {
    let ing = moments::ingest_with(&a.trace, IngestOptions { min_prob: a.min_prob })?;
    let doc = MomentsDocument::from_ingested(&a.trace, &ing)?;
    write_json(a.out.as_deref(), &doc)?;

    let mut row = format!(
        "mu = {:.4} ± {:.4}   mu2 = {:.4} ± {:.4}",
        doc.mu, doc.stderr_mu, doc.mu2, doc.stderr_mu2
    );
    if let (Some(ce), Some(z)) = (doc.mu_ce, doc.pr_q_zero) {
        row += &format!("   mu_ce = {ce:.4}   pr_q_zero = {z:.4}");
    }
    eprintln!("{row}   ({} records)", doc.n_records);
    if !doc.malformed_lines.is_empty() {
        eprintln!("skipped {} malformed lines", doc.malformed_lines.len());
    }
    if !doc.valid_for_bounds {
        eprintln!("warning: every record is a point mass (mu = 0); no bound applies");
    }
    Ok(None)
}

fn bound(a: BoundArgs) -> Outcome {
    let mut params = MomentParams::new(a.mu, a.mu2);
    if let (Some(ce), Some(z)) = (a.mu_ce, a.pr_q_zero) {
        params = params.with_cross_entropy(ce, z);
    }
    let report = BoundReport::compute(&params, a.p_capacity, a.renewal_x, None)?;
    write_json(
        a.out.as_deref(),
        &json!({ "schema_version": SCHEMA_VERSION, "bounds": report }),
    )?;
    eprint!("{}", describe_bounds(&report));
    Ok(None)
}

fn describe_bounds(r: &BoundReport) -> String {
    let mut s = format!("P = {}   a = {:.4}   b = {:.4}\n", r.p_capacity, r.a, r.b);
    match r.exact_upper {
        Some(v) => s += &format!("E[X] <= {v:.4}\n"),
        None => s += &format!("exact bound needs P >= {:.3}\n", r.threshold),
    }
    s += &format!("E[X] <~ {:.4}   (ln P / mu, up to o(log P))\n", r.limit_upper.value);
    if let Some(ce) = &r.ce_lower {
        s += &format!("E[X] >~ {:.4}   (q-greedy, up to o(log P))\n", ce.value);
    }
    s
}

/// Moments and bounds for a family, or `None` when it has no entropy.
fn family_bounds(family: &Family, samples: u64, p: u64) -> anyhow::Result<(MomentParams, Option<BoundReport>)> {
    let m = family_moments(family, samples);
    if m.mu == 0.0 {
        return Ok((m, None));
    }
    let report = BoundReport::compute(&m, p, None, Some(!family.is_arithmetic()))?;
    Ok((m, Some(report)))
}

fn simulate(a: SimulateArgs) -> Outcome {
    let family = load_family(&a.family.family)?;
    let cfg = RunConfig {
        constraints: a.sim.constraints(),
        ..RunConfig::new(a.p_capacity, a.mode, a.sim.seed)
    };
    let run = run_with(&family, &cfg, a.sim.tokens)?;
    let (moments, bounds) = family_bounds(&family, a.family.moment_samples, a.p_capacity)?;
    write_json(
        a.out.as_deref(),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "family": family.spec(),
            "constraints": cfg.constraints,
            "run": run,
            "moments": moments,
            "bounds": bounds,
        }),
    )?;

    eprintln!(
        "{} P={} mode={}: E[X] = {:.4} ± {:.4} over {} iterations",
        family, run.p_capacity, run.mode, run.mean_x, run.stderr_x, run.iterations
    );
    if let Some(upper) = bounds.as_ref().and_then(|b| b.exact_upper) {
        eprintln!("exact upper bound {upper:.4}");
    }
    if let Some(ms) = a.verifier_latency_ms {
        print_timing(&run, ms);
    }
    Ok(None)
}

fn print_timing(run: &RunReport, latency_ms: f64) {
    let spec = run.iterations as f64 * latency_ms / 1000.0;
    let plain = run.total_tokens as f64 * latency_ms / 1000.0;
    eprintln!(
        "at {latency_ms} ms per verifier call: {spec:.2} s speculative vs {plain:.2} s autoregressive ({:.2}x)",
        plain / spec
    );
}

const CSV_HEADER: &str = "P,mode,mean_x,stderr_x,exact_upper,limit_upper,ce_lower,valid";

fn sweep(a: SweepArgs) -> Outcome {
    if a.p_grid.is_empty() || a.p_grid.windows(2).any(|w| w[0] >= w[1]) {
        bail!("p-grid must be nonempty and strictly ascending");
    }
    let family = load_family(&a.family.family)?;
    let mut out = open_out(a.out.as_deref())?;
    writeln!(
        out,
        "# speclimit sweep schema_version={SCHEMA_VERSION} family={} seed={} tokens={}",
        serde_json::to_string(family.spec())?,
        a.sim.seed,
        a.sim.tokens
    )?;
    writeln!(
        out,
        "# exact_upper: closed-form bound, empty below P = 1 + mu2/mu^2; limit_upper: ln P/mu; \
         ce_lower: q-greedy lower bound (paired families); valid: P at or above the threshold"
    )?;
    writeln!(out, "{CSV_HEADER}")?;
    let m = family_moments(&family, a.family.moment_samples);
    for &p in &a.p_grid {
        let bounds = if m.mu > 0.0 {
            Some(BoundReport::compute(&m, p, None, Some(!family.is_arithmetic()))?)
        } else {
            None
        };
        for &mode in &a.modes {
            let cfg = RunConfig {
                constraints: a.sim.constraints(),
                ..RunConfig::new(p, mode, a.sim.seed)
            };
            let run = run_with(&family, &cfg, a.sim.tokens)?;
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{p},{mode},{},{},{},{},{},{}",
                run.mean_x,
                run.stderr_x,
                cell(bounds.as_ref().and_then(|b| b.exact_upper)),
                cell(bounds.as_ref().map(|b| b.limit_upper.value)),
                cell(bounds.as_ref().and_then(|b| b.ce_lower.as_ref().map(|c| c.value))),
                bounds.as_ref().is_some_and(|b| b.validity.p_above_threshold),
            )?;
            eprintln!("P={p:<5} {mode:<8} E[X] = {:.4} ± {:.4}", run.mean_x, run.stderr_x);
        }
    }
    out.flush()?;
    Ok(None)
}

fn check(a: CheckArgs) -> Outcome {
    let reports: Vec<CheckReport> = match &a.family {
        Some(f) => {
            let family = load_family(f)?.with_seed(a.seed);
            lemma_checks::run_suite_for(a.suite, &family, a.trials)?
        }
        None => lemma_checks::run_suite(a.suite, a.seed, a.trials)?,
    };
    let pass = reports.iter().all(|r| r.pass);
    let truncated = reports.iter().any(|r| r.truncated > 0);
    write_json(
        a.out.as_deref(),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "suite": a.suite,
            "seed": a.seed,
            "trials": a.trials,
            "pass": pass,
            "reports": reports,
        }),
    )?;
    eprint!("{}", lemma_checks::render_table(&reports));
    for r in reports.iter().filter(|r| !r.pass) {
        for i in r.failing() {
            eprintln!("FAILED {} [{}] {}: z = {:.3}", r.check, r.family, i.name, i.z);
        }
    }
    Ok(if truncated {
        Some(Failure::Truncated)
    } else if !pass {
        Some(Failure::Checks)
    } else {
        None
    })
}

fn gen_trace(a: GenTraceArgs) -> Outcome {
    let family = load_family(&a.family)?;
    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    moments::write_synthetic_trace(&family, a.records, a.seed, BufWriter::new(file))?;
    eprintln!("wrote {} records from {} to {}", a.records, family, a.out.display());
    Ok(None)
}
