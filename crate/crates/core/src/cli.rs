//! Command-line front end.
//!
//! Exit codes: 0 success (reduced or unchanged), 1 usage, I/O or parse error,
//! 2 infeasibility detected, 3 certificate rejected.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::gen::{gen_planted, GenParams, PlantSummary, Preset};
use crate::lift::{lift_solution_file, verify_certificate};
use crate::metrics::{dimacs_errors, helped, worst_error, DimacsErrors, HelpedVerdict, RatioMode, DEFAULT_TOL_EIG};
use crate::model::{GlobalIndex, SdpInstance};
use crate::reduce::{preprocess, Outcome, ReductionCertificate, StepAction, Tolerances, Verdict};
use crate::sdpa::{parse_instance, parse_solution, write_instance, write_solution, SdpaError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_REJECTED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sdp-presolve", version, about = "Inspection-based presolve for SDPA sparse SDP instances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Presolve one instance (or every .dat-s file in a directory).
    Reduce(ReduceArgs),
    /// Replay a certificate against the original instance.
    Verify(VerifyArgs),
    /// Map a solution of the reduced instance back to the original.
    Lift(LiftArgs),
    /// DIMACS error measures of a solution, optionally with the helped verdict.
    Metrics(MetricsArgs),
    /// Generate a seeded instance with planted reductions.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
struct TolArgs {
    /// Entries with magnitude at most this are outside the support.
    #[arg(long, default_value_t = Tolerances::default().eps_support)]
    eps_support: f64,
    /// Right-hand sides with magnitude at most this count as zero.
    #[arg(long, default_value_t = Tolerances::default().eps_rhs)]
    eps_rhs: f64,
    /// Relative Cholesky pivot threshold.
    #[arg(long, default_value_t = Tolerances::default().eps_pivot)]
    eps_pivot: f64,
    /// Set every tolerance to zero (overrides the three above).
    #[arg(long)]
    strict: bool,
}

impl TolArgs {
    fn tolerances(&self) -> Result<Tolerances> {
        if self.strict {
            return Ok(Tolerances::strict());
        }
        for (name, v) in [("eps-support", self.eps_support), ("eps-rhs", self.eps_rhs), ("eps-pivot", self.eps_pivot)] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!("--{name} must be a finite nonnegative number, got {v}");
            }
        }
        Ok(Tolerances { eps_support: self.eps_support, eps_rhs: self.eps_rhs, eps_pivot: self.eps_pivot })
    }
}

#[derive(Debug, Args)]
struct ReduceArgs {
    #[arg(long = "in", value_name = "FILE", required_unless_present = "in_dir", conflicts_with = "in_dir")]
    input: Option<PathBuf>,
    /// Process every `*.dat-s` file in this directory.
    #[arg(long, value_name = "DIR", requires = "out_dir")]
    in_dir: Option<PathBuf>,
    /// Batch output directory; per input `<stem>.reduced.dat-s`, `<stem>.cert.json`, `<stem>.report.json`.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Reduced instance (written only when the instance was reduced).
    #[arg(long, value_name = "FILE", conflicts_with = "in_dir")]
    out: Option<PathBuf>,
    /// Write `--out` even when the instance is unchanged.
    #[arg(long, requires = "out")]
    force_out: bool,
    #[arg(long, value_name = "FILE", conflicts_with = "in_dir")]
    cert: Option<PathBuf>,
    #[arg(long, value_name = "FILE", conflicts_with = "in_dir")]
    report: Option<PathBuf>,
    #[command(flatten)]
    tol: TolArgs,
    /// Stop after this many basic steps.
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long = "in", value_name = "ORIGINAL")]
    input: PathBuf,
    #[arg(long, value_name = "CERT")]
    cert: PathBuf,
}

#[derive(Debug, Args)]
struct LiftArgs {
    #[arg(long, value_name = "CERT")]
    cert: PathBuf,
    /// Solution of the reduced instance.
    #[arg(long, value_name = "FILE")]
    sol: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Role {
    Before,
    After,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_name = "FILE")]
    sol: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    obj_before: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    obj_after: Option<f64>,
    /// Worst error of the other run of the before/after pair.
    #[arg(long, allow_hyphen_values = true)]
    peer_err: Option<f64>,
    /// Whether this solution is the before or after run.
    #[arg(long, value_enum, default_value_t = Role::Before)]
    role: Role,
    /// Presolve detected infeasibility.
    #[arg(long)]
    infeasible_detected: bool,
    /// Read the error-ratio clause literally (before/after < 1/10).
    #[arg(long)]
    strict_ratio: bool,
    #[arg(long, default_value_t = DEFAULT_TOL_EIG)]
    tol_eig: f64,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, value_parser = clap::value_parser!(Preset))]
    preset: Preset,
    /// Number of planted steps (ignored by the feasible preset).
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long)]
    base_n: Option<usize>,
    #[arg(long)]
    base_m: Option<usize>,
    /// Use this size for every planted support instead of cycling 1, 2, 3.
    #[arg(long)]
    support_size: Option<usize>,
    #[arg(long)]
    coupling_density: Option<f64>,
    #[arg(long)]
    value_scale: Option<f64>,
    #[arg(long)]
    no_scramble: bool,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Plant summary (default `<out>.plant.json`).
    #[arg(long, value_name = "FILE")]
    summary: Option<PathBuf>,
}

impl clap::builder::ValueParserFactory for Preset {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Preset>())
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Reduce(a) => cmd_reduce(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Lift(a) => cmd_lift(&a).map(|()| EXIT_OK),
        Command::Metrics(a) => cmd_metrics(&a).map(|()| EXIT_OK),
        Command::Gen(a) => cmd_gen(&a).map(|()| EXIT_OK),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        EXIT_ERROR
    })
}

fn sdpa_context(path: &Path, e: SdpaError) -> anyhow::Error {
    match e.line() {
        Some(line) => {
            let full = e.to_string();
            let msg = full.strip_prefix(&format!("line {line}: ")).unwrap_or(&full).to_string();
            anyhow!("{}:{line}: {msg}", path.display())
        }
        None => anyhow!("{}: {e}", path.display()),
    }
}

fn open(path: &Path) -> Result<std::io::BufReader<fs::File>> {
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(std::io::BufReader::new(f))
}

pub fn read_instance(path: &Path) -> Result<SdpInstance> {
    parse_instance(open(path)?).map_err(|e| sdpa_context(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn read_certificate(path: &Path) -> Result<ReductionCertificate> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: malformed certificate", path.display()))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Serialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Serialize)]
pub struct StepLog {
    pub step: usize,
    /// Original 1-based constraint id.
    pub constraint: usize,
    pub sign: i8,
    pub action: StepAction,
    pub support_size: usize,
    pub support_original: Vec<GlobalIndex>,
    pub rhs: f64,
}

#[derive(Debug, Serialize)]
pub struct ReduceReport {
    pub schema_version: u32,
    pub input: String,
    pub verdict: Outcome,
    pub interpretation: &'static str,
    pub original: Dims,
    #[serde(rename = "final")]
    pub final_dims: Dims,
    pub steps: Vec<StepLog>,
    pub tolerances: Tolerances,
    pub wall_time_ms: f64,
}

const INTERPRETATION: &str =
    "matrices 1..m and the right-hand side vector of the file are read as A_i and b_i in A_i . X = b_i, X psd";

pub fn build_report(input: &str, inst: &SdpInstance, verdict: &Verdict, wall_time_ms: f64) -> ReduceReport {
    let cert = verdict.certificate();
    let (n, m) = verdict.final_dims();
    ReduceReport {
        schema_version: REPORT_SCHEMA_VERSION,
        input: input.to_string(),
        verdict: cert.outcome,
        interpretation: INTERPRETATION,
        original: Dims { n: inst.n(), m: inst.m() },
        final_dims: Dims { n, m },
        steps: cert
            .steps
            .iter()
            .enumerate()
            .map(|(k, s)| StepLog {
                step: k + 1,
                constraint: s.constraint_id,
                sign: s.sign.into(),
                action: s.action,
                support_size: s.support.len(),
                support_original: s.support_original.as_slice().to_vec(),
                rhs: s.rhs_at_step,
            })
            .collect(),
        tolerances: cert.tolerances,
        wall_time_ms,
    }
}

struct ReduceFiles<'a> {
    out: Option<&'a Path>,
    force_out: bool,
    cert: Option<&'a Path>,
    report: Option<&'a Path>,
}

fn reduce_one(input: &Path, files: &ReduceFiles, tol: &Tolerances, max_steps: Option<usize>) -> Result<ReduceReport> {
    let inst = read_instance(input)?;
    let start = Instant::now();
    let verdict = preprocess(&inst, tol, max_steps);
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;

    if let Some(out) = files.out {
        match &verdict {
            Verdict::Reduced(reduced, _) => write_file(out, &write_instance(reduced))?,
            Verdict::Unchanged(_) if files.force_out => write_file(out, &write_instance(&inst))?,
            _ => {}
        }
    }
    if let Some(cert) = files.cert {
        write_file(cert, &to_json(verdict.certificate()))?;
    }
    let report = build_report(&input.display().to_string(), &inst, &verdict, wall_time_ms);
    if let Some(path) = files.report {
        write_file(path, &to_json(&report))?;
    }
    Ok(report)
}

fn summary_line(r: &ReduceReport) -> String {
    format!(
        "{}: {} after {} steps, n {} -> {}, m {} -> {}",
        r.input,
        r.verdict.as_str(),
        r.steps.len(),
        r.original.n,
        r.final_dims.n,
        r.original.m,
        r.final_dims.m
    )
}

fn cmd_reduce(a: &ReduceArgs) -> Result<i32> {
    let tol = a.tol.tolerances()?;
    if let Some(dir) = &a.in_dir {
        let out_dir = a.out_dir.as_ref().expect("clap enforces --out-dir");
        return reduce_batch(dir, out_dir, &tol, a.max_steps);
    }
    let input = a.input.as_ref().expect("clap enforces --in");
    let files = ReduceFiles { out: a.out.as_deref(), force_out: a.force_out, cert: a.cert.as_deref(), report: a.report.as_deref() };
    let report = reduce_one(input, &files, &tol, a.max_steps)?;
    println!("{}", summary_line(&report));
    Ok(if report.verdict == Outcome::Infeasible { EXIT_INFEASIBLE } else { EXIT_OK })
}

/// Every file is processed independently; one failure does not stop the rest
/// but makes the batch exit 1.
fn reduce_batch(dir: &Path, out_dir: &Path, tol: &Tolerances, max_steps: Option<usize>) -> Result<i32> {
    let mut inputs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.to_string_lossy().ends_with(".dat-s"))
        .collect();
    inputs.sort();
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;

    let results: Vec<(PathBuf, Result<ReduceReport>)> = inputs
        .par_iter()
        .map(|input| {
            let name = input.file_name().unwrap().to_string_lossy();
            let stem = name.strip_suffix(".dat-s").unwrap_or(&name);
            let out = out_dir.join(format!("{stem}.reduced.dat-s"));
            let cert = out_dir.join(format!("{stem}.cert.json"));
            let report = out_dir.join(format!("{stem}.report.json"));
            let files = ReduceFiles { out: Some(&out), force_out: false, cert: Some(&cert), report: Some(&report) };
            (input.clone(), reduce_one(input, &files, tol, max_steps))
        })
        .collect();

    let mut failed = false;
    for (input, r) in results {
        match r {
            Ok(report) => println!("{}", summary_line(&report)),
            Err(e) => {
                failed = true;
                eprintln!("error: {}: {e:#}", input.display());
            }
        }
    }
    Ok(if failed { EXIT_ERROR } else { EXIT_OK })
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let inst = read_instance(&a.input)?;
    let cert = read_certificate(&a.cert)?;
    let report = verify_certificate(&inst, &cert, &cert.tolerances);
    if report.ok {
        println!("certificate verified: {} steps, outcome {}", report.steps_checked, cert.outcome.as_str());
        Ok(EXIT_OK)
    } else {
        for d in &report.diagnostics {
            eprintln!("{d}");
        }
        Ok(EXIT_REJECTED)
    }
}

fn cmd_lift(a: &LiftArgs) -> Result<()> {
    let cert = read_certificate(&a.cert)?;
    if cert.outcome == Outcome::Infeasible {
        bail!("certificate declares infeasibility; there is no reduced instance to lift from");
    }
    let structure = cert.reduced_structure().context("certificate is inconsistent")?;
    let sol = parse_solution(open(&a.sol)?, &structure, cert.kept_constraints.len()).map_err(|e| sdpa_context(&a.sol, e))?;
    let lifted = lift_solution_file(&sol, &cert)?;
    write_file(&a.out, &write_solution(&lifted))
}

#[derive(Debug, Serialize)]
struct MetricsReport {
    schema_version: u32,
    errors: DimacsErrors,
    worst_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    helped: Option<HelpedReport>,
}

#[derive(Debug, Serialize)]
struct HelpedReport {
    #[serde(flatten)]
    verdict: HelpedVerdict,
    reason_code: Option<u8>,
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    if !(a.tol_eig > 0.0 && a.tol_eig.is_finite()) {
        bail!("--tol-eig must be positive");
    }
    let inst = read_instance(&a.input)?;
    let sol = parse_solution(open(&a.sol)?, &inst.structure, inst.m()).map_err(|e| sdpa_context(&a.sol, e))?;
    let errors = dimacs_errors(&inst, &sol, a.tol_eig)?;
    let worst = worst_error(&errors).ok();

    let wants_helped = a.peer_err.is_some() || a.infeasible_detected || (a.obj_before.is_some() && a.obj_after.is_some());
    let helped = if wants_helped {
        let own = worst.unwrap_or(f64::NAN);
        let (before, after) = match (a.role, a.peer_err) {
            (_, None) => (f64::NAN, f64::NAN),
            (Role::Before, Some(p)) => (own, p),
            (Role::After, Some(p)) => (p, own),
        };
        let mode = if a.strict_ratio { RatioMode::Literal } else { RatioMode::Improvement };
        let verdict = helped(before, after, a.infeasible_detected, a.obj_before, a.obj_after, mode);
        Some(HelpedReport { verdict, reason_code: verdict.reason.map(|r| r.code()) })
    } else {
        None
    };
    print!("{}", to_json(&MetricsReport { schema_version: REPORT_SCHEMA_VERSION, errors, worst_error: worst, helped }));
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut p = GenParams::preset(a.preset, a.seed, a.k);
    if let Some(size) = a.support_size {
        p.support_sizes = vec![size; p.k()];
    }
    if let Some(v) = a.base_n {
        p.base_n = v;
    }
    if let Some(v) = a.base_m {
        p.base_m = v;
    }
    if let Some(v) = a.coupling_density {
        p.coupling_density = v;
    }
    if let Some(v) = a.value_scale {
        p.value_scale = v;
    }
    p.scramble = !a.no_scramble;
    let g = gen_planted(&p)?;
    write_file(&a.out, &write_instance(&g.instance))?;
    let summary_path = a.summary.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".plant.json");
        PathBuf::from(s)
    });
    write_file(&summary_path, &to_json::<PlantSummary>(&g.summary))?;
    println!("wrote {} (n {}, m {})", a.out.display(), g.summary.n, g.summary.m);
    Ok(())
}
