//! Command-line front end.
//!
//! Exit codes: 0 success, 1 bad input or arguments, 2 the dynamics failed
//! (blowup, step underflow, ...) or a replay did not reproduce.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use bioproto_core::ast::{check_linear, Protocol, ViolationKind};
use bioproto_core::crn::Crn;
use bioproto_core::integrator::{FlowConfig, Method};
use bioproto_core::noise::{EquilibrateNoise, NoiseConfig};
use bioproto_core::pdmp::{ExecConfig, PdmpError};
use bioproto_core::sample::EvalResult;
use bioproto_core::sem_det::{eval_traced, Env, EvalError, Trace};
use bioproto_core::sem_stoch::{compile_to_pdmp, eval_stoch_traced, CompileError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crn_format::{parse_crn, CrnFile, CrnWarning};
use crate::lexer::{Span, SyntaxError};
use crate::manifest::{hash_outputs, sha256_bytes, FileHash, RunManifest, MANIFEST_SCHEMA_VERSION};
use crate::output::{self, RunRecord};
use crate::parser::{parse_template, Template, TemplateError};
use crate::predicate::Predicate;
use crate::smc::{cell_stream, is_connected, sweep, Axis, ErrorPolicy, SmcError, SweepGrid, SweepSpec};

#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(
    name = "bioproto",
    version,
    about = "Check, simulate and sweep experimental protocols over reaction networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Static checks; prints one JSON diagnostic per line.
    Check(CheckArgs),
    /// Run a protocol deterministically or as a stochastic ensemble.
    Simulate(SimulateArgs),
    /// Estimate a predicate's probability over a parameter grid.
    Sweep(SweepArgs),
    /// Run the protocol compiled to a piecewise-deterministic Markov process.
    Pdmp(PdmpArgs),
    /// Re-run the command recorded in a manifest and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Det,
    Stoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Dopri5,
    Rosenbrock,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Reaction network file.
    #[arg(long)]
    pub crn: PathBuf,
    /// Noise configuration (JSON). Stochastic commands default to
    /// dispensing and timing noise with exact rates.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    /// Integrator configuration (JSON); the flags below override it.
    #[arg(long)]
    pub flow: Option<PathBuf>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// `name=value` for a `${name}` placeholder. In `sweep`,
    /// `name=lo:hi:steps` makes a grid axis.
    #[arg(long = "param")]
    pub params: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CheckArgs {
    pub protocol: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "det")]
    pub mode: Mode,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    pub protocol: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "det")]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write a dense trajectory per equilibration.
    #[arg(long)]
    pub trace: bool,
    #[arg(long, value_enum, default_value = "fail-fast")]
    pub on_error: ErrorPolicy,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    pub template: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// `"<species> in [lo, hi] at final|obs:<idn>"`.
    #[arg(long)]
    pub predicate: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Runs per cell.
    #[arg(long, default_value_t = 500)]
    pub runs: u64,
    /// One minus the confidence level of the intervals.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "fail-fast")]
    pub on_error: ErrorPolicy,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PdmpArgs {
    pub protocol: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Defaults to `replay/` inside the recorded output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    User(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::User(format!("{}: {e}", path.display()))
}

fn eval_err(index: Option<u64>, e: &EvalError) -> CliError {
    let msg = match index {
        Some(i) => format!("run {i}: {e}"),
        None => e.to_string(),
    };
    if e.is_ill_posed() {
        CliError::Runtime(msg)
    } else {
        CliError::User(msg)
    }
}

/// One machine-readable finding of `check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub file: PathBuf,
    pub span: Option<Span>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

impl Diagnostic {
    fn new(severity: Severity, code: &str, file: &Path, span: Option<Span>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity,
            code: code.into(),
            file: file.to_path_buf(),
            span,
            message: message.into(),
        }
    }

    fn syntax(file: &Path, e: &SyntaxError) -> Self {
        Diagnostic::new(Severity::Error, "syntax", file, Some(e.span), e.message.clone())
    }

    pub fn json(&self) -> String {
        serde_json::to_string(self).expect("diagnostics serialize")
    }
}

/// Everything a command needs, loaded and checked.
pub struct Loaded {
    pub crn: CrnFile,
    pub template: Template,
    pub noise: NoiseConfig,
    pub flow: FlowConfig,
    pub inputs: Vec<FileHash>,
}

fn read_input(role: &str, path: &Path, inputs: &mut Vec<FileHash>) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    inputs.push(FileHash {
        role: role.into(),
        path: path.to_path_buf(),
        sha256: sha256_bytes(&bytes),
    });
    String::from_utf8(bytes).map_err(|_| CliError::User(format!("{}: not valid UTF-8", path.display())))
}

fn flow_config(m: &ModelArgs, inputs: &mut Vec<FileHash>) -> Result<FlowConfig, CliError> {
    let mut cfg = match &m.flow {
        Some(p) => {
            serde_json::from_str(&read_input("flow", p, inputs)?).map_err(|e| user(format!("{}: {e}", p.display())))?
        }
        None => FlowConfig::default(),
    };
    if let Some(r) = m.rel_tol {
        cfg.rel_tol = r;
    }
    if let Some(a) = m.abs_tol {
        cfg.abs_tol = a;
    }
    match m.method {
        Some(MethodArg::Dopri5) => cfg.method = Method::DormandPrince,
        Some(MethodArg::Rosenbrock) => cfg.method = Method::Rosenbrock,
        None => {}
    }
    cfg.validate()
        .map_err(|_| user("tolerances, step bounds and limits must be positive"))?;
    Ok(cfg)
}

fn noise_config(m: &ModelArgs, stochastic: bool, inputs: &mut Vec<FileHash>) -> Result<NoiseConfig, CliError> {
    match &m.noise {
        Some(p) => {
            serde_json::from_str(&read_input("noise", p, inputs)?).map_err(|e| user(format!("{}: {e}", p.display())))
        }
        None if stochastic => Ok(NoiseConfig::protocol_only()),
        None => Ok(NoiseConfig::degenerate()),
    }
}

/// A `--param` value: one number, or `lo:hi:steps`.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Fixed(f64),
    Range { lo: f64, hi: f64, steps: usize },
}

pub fn parse_param(s: &str) -> Result<(String, ParamValue), CliError> {
    let bad = || {
        user(format!(
            "malformed --param `{s}`, expected name=value or name=lo:hi:steps"
        ))
    };
    let (name, value) = s.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = value.split(':').collect();
    let num = |t: &str| t.trim().parse::<f64>().ok().filter(|v| v.is_finite());
    let v = match parts[..] {
        [v] => ParamValue::Fixed(num(v).ok_or_else(bad)?),
        [lo, hi, steps] => {
            let (lo, hi) = (num(lo).ok_or_else(bad)?, num(hi).ok_or_else(bad)?);
            let steps: usize = steps.trim().parse().ok().filter(|n| *n > 0).ok_or_else(bad)?;
            if lo > hi {
                return Err(bad());
            }
            ParamValue::Range { lo, hi, steps }
        }
        _ => return Err(bad()),
    };
    let name = name.trim();
    if name.is_empty() {
        return Err(bad());
    }
    Ok((name.to_string(), v))
}

pub fn parse_params(params: &[String]) -> Result<BTreeMap<String, ParamValue>, CliError> {
    let mut out = BTreeMap::new();
    for p in params {
        let (name, v) = parse_param(p)?;
        if out.insert(name.clone(), v).is_some() {
            return Err(user(format!("parameter `{name}` is given twice")));
        }
    }
    Ok(out)
}

/// Values for one instantiation: fixed values, grid axes at their first point.
fn representative(params: &BTreeMap<String, ParamValue>) -> BTreeMap<String, f64> {
    params
        .iter()
        .map(|(k, v)| {
            let x = match v {
                ParamValue::Fixed(x) => *x,
                ParamValue::Range { lo, .. } => *lo,
            };
            (k.clone(), x)
        })
        .collect()
}

/// Static checks of `protocol` against `crn`. Returns the diagnostics and,
/// when parsing succeeded, the loaded inputs.
pub fn diagnose(
    protocol: &Path,
    model: &ModelArgs,
    stochastic: bool,
) -> Result<(Vec<Diagnostic>, Option<Loaded>), CliError> {
    let mut inputs = Vec::new();
    let mut diags = Vec::new();
    let crn_text = read_input("crn", &model.crn, &mut inputs)?;
    let proto_text = read_input("protocol", protocol, &mut inputs)?;
    let noise = noise_config(model, stochastic, &mut inputs)?;
    let flow = flow_config(model, &mut inputs)?;
    let params = parse_params(&model.params)?;

    let crn = match parse_crn(&crn_text) {
        Ok(c) => c,
        Err(e) => {
            diags.push(Diagnostic::syntax(&model.crn, &e));
            return Ok((diags, None));
        }
    };
    for (kind, w) in &crn.warnings {
        let code = match kind {
            CrnWarning::RepeatedSpecies => "repeated_species",
            CrnWarning::NullEffect => "null_effect",
        };
        diags.push(Diagnostic::new(
            Severity::Warning,
            code,
            &model.crn,
            Some(w.span),
            w.message.clone(),
        ));
    }
    for i in crn.crn.superlinear_reactions() {
        diags.push(Diagnostic::new(
            Severity::Warning,
            "superlinear",
            &model.crn,
            crn.spans.get(i).copied(),
            "autocatalytic reaction of order above one; solutions may blow up in finite time",
        ));
    }
    if let Err(e) = noise.validate(crn.crn.reactions().len()) {
        diags.push(Diagnostic::new(
            Severity::Error,
            "noise",
            model.noise.as_deref().unwrap_or(Path::new("")),
            None,
            e.to_string(),
        ));
    }

    let template = match parse_template(&proto_text, &crn.crn, &crn.units) {
        Ok(t) => t,
        Err(e) => {
            diags.push(Diagnostic::syntax(protocol, &e));
            return Ok((diags, None));
        }
    };
    let spans = &template.parsed.spans;
    for v in check_linear(&template.parsed.protocol) {
        let code = match v.kind {
            ViolationKind::Unbound => "unbound_variable",
            ViolationKind::Let | ViolationKind::Dispense => "linearity",
        };
        diags.push(Diagnostic::new(
            Severity::Error,
            code,
            protocol,
            spans.get(v.node).copied(),
            v.to_string(),
        ));
    }
    for h in &template.holes {
        if !params.contains_key(&h.name) {
            diags.push(Diagnostic::new(
                Severity::Error,
                "unbound_parameter",
                protocol,
                Some(h.span),
                format!("parameter `{}` has no value; pass --param {}=<value>", h.name, h.name),
            ));
        }
    }
    let names = template.names();
    for k in params.keys() {
        if !names.contains(&k.as_str()) {
            diags.push(Diagnostic::new(
                Severity::Error,
                "unknown_parameter",
                protocol,
                None,
                format!("no parameter named `{k}` in the protocol"),
            ));
        }
    }
    if diags
        .iter()
        .all(|d| d.code != "unbound_parameter" && d.code != "unknown_parameter")
    {
        match template.instantiate(&representative(&params)) {
            Ok(p) => {
                if stochastic && noise.equilibrate == EquilibrateNoise::Exponential {
                    p.for_each_node(&mut |id, node| {
                        if let Protocol::Equilibrate(_, t) = node {
                            if !(*t > 0.0) {
                                diags.push(Diagnostic::new(
                                    Severity::Error,
                                    "assumption1",
                                    protocol,
                                    spans.get(id).copied(),
                                    format!("equilibrate duration must be > 0 under exponential timing, got {t} s"),
                                ));
                            }
                        }
                    });
                }
            }
            Err(TemplateError::Mismatch {
                name,
                value,
                what,
                span,
            }) => diags.push(Diagnostic::new(
                Severity::Error,
                "parameter",
                protocol,
                Some(span),
                format!("parameter `{name}` = {value} is not a valid {what}"),
            )),
            Err(e) => diags.push(Diagnostic::new(
                Severity::Error,
                "parameter",
                protocol,
                None,
                e.to_string(),
            )),
        }
    }
    let loaded = Loaded {
        crn,
        template,
        noise,
        flow,
        inputs,
    };
    Ok((diags, Some(loaded)))
}

fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Run the checks, print the diagnostics to stderr and fail on errors.
fn load_checked(protocol: &Path, model: &ModelArgs, stochastic: bool) -> Result<Loaded, CliError> {
    let (diags, loaded) = diagnose(protocol, model, stochastic)?;
    for d in &diags {
        eprintln!("{}", d.json());
    }
    match loaded {
        Some(l) if !has_errors(&diags) => Ok(l),
        _ => Err(user(format!("{}: check failed", protocol.display()))),
    }
}

fn fixed_params(model: &ModelArgs) -> Result<BTreeMap<String, f64>, CliError> {
    let mut out = BTreeMap::new();
    for (k, v) in parse_params(&model.params)? {
        match v {
            ParamValue::Fixed(x) => {
                out.insert(k, x);
            }
            ParamValue::Range { .. } => return Err(user(format!("--param {k}: ranges are only allowed in sweep"))),
        }
    }
    Ok(out)
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut BufWriter<File>) -> Result<(), String>,
) -> Result<(), CliError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(|e| user(format!("{}: {e}", path.display())))?;
    w.flush().map_err(io_err(&path))
}

struct Recorded<'a> {
    cli: &'a Cli,
    inputs: Vec<FileHash>,
    flow: &'a FlowConfig,
    seed: Option<u64>,
    runs: Option<u64>,
    out: &'a Path,
}

fn write_manifest(r: Recorded<'_>) -> Result<(), CliError> {
    let outputs = hash_outputs(r.out).map_err(io_err(r.out))?;
    let m = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        output_schema_version: output::SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: serde_json::to_value(r.cli).expect("arguments serialize"),
        inputs: r.inputs,
        flow: serde_json::to_value(r.flow).expect("flow config serializes"),
        seed: r.seed,
        runs: r.runs,
        out_dir: r.out.to_path_buf(),
        outputs,
    };
    m.write(r.out).map_err(io_err(r.out))
}

fn trace_name(run: Option<u64>, k: usize) -> String {
    match run {
        Some(r) => format!("trace_{r}_{k}.csv"),
        None => format!("trace_{k}.csv"),
    }
}

fn write_traces(out: &Path, run: Option<u64>, traces: &[Trace], crn: &Crn) -> Result<(), CliError> {
    for (k, t) in traces.iter().enumerate() {
        write_file(out, &trace_name(run, k), |w| {
            output::write_trace(w, t, crn).map_err(|e| e.to_string())
        })?;
    }
    Ok(())
}

fn cmd_check(a: &CheckArgs) -> Result<(), CliError> {
    let (diags, _) = diagnose(&a.protocol, &a.model, a.mode == Mode::Stoch)?;
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    for d in &diags {
        writeln!(lock, "{}", d.json()).map_err(user)?;
    }
    if has_errors(&diags) {
        Err(CliError::User(format!("{}: check failed", a.protocol.display())))
    } else {
        Ok(())
    }
}

type RunOutcome = (Result<EvalResult, String>, Vec<Trace>);
type TracedRun = Result<(EvalResult, Vec<Trace>), EvalError>;

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), CliError> {
    let stochastic = a.mode == Mode::Stoch;
    let l = load_checked(&a.protocol, &a.model, stochastic)?;
    let protocol = l.template.instantiate(&fixed_params(&a.model)?).map_err(user)?;
    let crn = &l.crn.crn;
    create_out(&a.out)?;
    match a.mode {
        Mode::Det => {
            let (r, traces) = eval_traced(&protocol, crn, &Env::new(), &l.flow).map_err(|e| eval_err(None, &e))?;
            write_file(&a.out, "final.json", |w| {
                output::write_final(w, &r, crn, &l.crn.units).map_err(|e| e.to_string())
            })?;
            if a.trace {
                write_traces(&a.out, None, &traces, crn)?;
            }
        }
        Mode::Stoch => {
            if a.runs == 0 {
                return Err(user("--runs must be at least 1"));
            }
            let cell = cell_stream(a.seed, 0);
            let results: Vec<(TracedRun, u64)> = (0..a.runs)
                .into_par_iter()
                .map(|i| {
                    let s = cell.child(i);
                    (
                        eval_stoch_traced(&protocol, crn, &Env::new(), &l.flow, &l.noise, s),
                        s.key(),
                    )
                })
                .collect();
            let mut outcomes: Vec<(RunOutcome, u64)> = Vec::with_capacity(results.len());
            for (i, (r, key)) in results.into_iter().enumerate() {
                match r {
                    Ok((e, t)) => outcomes.push(((Ok(e), t), key)),
                    Err(e) if a.on_error == ErrorPolicy::Skip => {
                        log::warn!("run {i}: {e}");
                        outcomes.push(((Err(output::run_error(&e)), Vec::new()), key));
                    }
                    Err(e) => return Err(eval_err(Some(i as u64), &e)),
                }
            }
            if outcomes.iter().all(|((r, _), _)| r.is_err()) {
                return Err(CliError::Runtime(format!("all {} runs failed", a.runs)));
            }
            let records: Vec<RunRecord<'_>> = outcomes
                .iter()
                .enumerate()
                .map(|(i, ((r, _), key))| RunRecord {
                    index: i as u64,
                    seed: *key,
                    outcome: r,
                })
                .collect();
            write_file(&a.out, "runs.csv", |w| {
                output::write_runs(w, &records, crn).map_err(|e| e.to_string())
            })?;
            write_file(&a.out, "observations.csv", |w| {
                output::write_observations(w, &records, crn).map_err(|e| e.to_string())
            })?;
            if a.trace {
                for (i, ((_, traces), _)) in outcomes.iter().enumerate() {
                    write_traces(&a.out, Some(i as u64), traces, crn)?;
                }
            }
        }
    }
    write_manifest(Recorded {
        cli,
        inputs: l.inputs,
        flow: &l.flow,
        seed: stochastic.then_some(a.seed),
        runs: stochastic.then_some(a.runs),
        out: &a.out,
    })
}

/// Text heat map of a two-parameter grid.
pub fn heat_map(grid: &SweepGrid) -> String {
    let mut s = String::new();
    if grid.axes.len() != 2 {
        return s;
    }
    let (rows, cols) = (&grid.axes[0], &grid.axes[1]);
    s.push_str(&format!("{:>8}", format!("{}\\{}", rows.name, cols.name)));
    for v in &cols.values {
        s.push_str(&format!(" {v:>8.4}"));
    }
    s.push('\n');
    for (i, r) in rows.values.iter().enumerate() {
        s.push_str(&format!("{r:>8.4}"));
        for j in 0..cols.values.len() {
            match &grid.cells[i * cols.values.len() + j].estimate {
                Some(e) => s.push_str(&format!(" {:>8.4}", e.p_hat)),
                None => s.push_str(&format!(" {:>8}", "error")),
            }
        }
        s.push('\n');
    }
    s
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> Result<(), CliError> {
    let l = load_checked(&a.template, &a.model, true)?;
    let pred = Predicate::parse(&a.predicate).map_err(user)?;
    pred.bind(&l.crn.crn).map_err(user)?;
    let mut axes = Vec::new();
    let mut fixed = BTreeMap::new();
    for (k, v) in parse_params(&a.model.params)? {
        match v {
            ParamValue::Fixed(x) => {
                fixed.insert(k, x);
            }
            ParamValue::Range { lo, hi, steps } => axes.push(Axis::linspace(&k, lo, hi, steps)),
        }
    }
    // axes in the order the placeholders appear
    let names = l.template.names();
    axes.sort_by_key(|ax| names.iter().position(|n| *n == ax.name));
    if axes.is_empty() {
        return Err(user("sweep needs at least one --param name=lo:hi:steps"));
    }
    let spec = SweepSpec {
        template: &l.template,
        axes,
        fixed,
        crn: &l.crn.crn,
        flow: &l.flow,
        noise: &l.noise,
        pred: &pred,
        n: a.runs,
        delta: a.delta,
        seed: a.seed,
        policy: a.on_error,
    };
    let grid = sweep(&spec).map_err(|e| match e {
        e @ SmcError::Run { .. } if e.is_ill_posed() => CliError::Runtime(e.to_string()),
        SmcError::AllFailed(_) => CliError::Runtime(e.to_string()),
        e => user(e),
    })?;
    create_out(&a.out)?;
    write_file(&a.out, "grid.csv", |w| {
        output::write_grid_csv(w, &grid).map_err(|e| e.to_string())
    })?;
    write_file(&a.out, "grid.json", |w| {
        output::write_grid_json(w, &grid, &pred.to_string()).map_err(|e| e.to_string())
    })?;
    print!("{}", heat_map(&grid));
    let argmax = grid.argmax();
    println!(
        "argmax ({} cell{}, {}):",
        argmax.len(),
        if argmax.len() == 1 { "" } else { "s" },
        if is_connected(&grid, &argmax) {
            "connected"
        } else {
            "not connected"
        }
    );
    for c in argmax {
        let cell = &grid.cells[c];
        let vals: Vec<String> = grid
            .axes
            .iter()
            .zip(&cell.values)
            .map(|(ax, v)| format!("{}={v}", ax.name))
            .collect();
        let e = cell.estimate.as_ref().expect("argmax cells have estimates");
        println!("  {} p_hat={} ci=[{}, {}]", vals.join(" "), e.p_hat, e.ci.0, e.ci.1);
    }
    write_manifest(Recorded {
        cli,
        inputs: l.inputs,
        flow: &l.flow,
        seed: Some(a.seed),
        runs: Some(a.runs),
        out: &a.out,
    })
}

fn pdmp_err(index: u64, e: &PdmpError) -> CliError {
    CliError::Runtime(format!("run {index}: {e}"))
}

fn cmd_pdmp(cli: &Cli, a: &PdmpArgs) -> Result<(), CliError> {
    let l = load_checked(&a.protocol, &a.model, true)?;
    let protocol = l.template.instantiate(&fixed_params(&a.model)?).map_err(user)?;
    let crn = &l.crn.crn;
    let compiled = compile_to_pdmp(&protocol, crn, &l.noise).map_err(|e| match e {
        CompileError::Eval(e) => eval_err(None, &e),
        e => user(e),
    })?;
    if a.runs == 0 {
        return Err(user("--runs must be at least 1"));
    }
    let cfg = ExecConfig {
        flow: l.flow,
        ..ExecConfig::default()
    };
    let cell = cell_stream(a.seed, 0);
    let results: Vec<_> = (0..a.runs)
        .into_par_iter()
        .map(|i| {
            let s = cell.child(i);
            (compiled.run(&cfg, &mut s.rng()), s.key())
        })
        .collect();
    let mut outcomes = Vec::with_capacity(results.len());
    let mut paths = Vec::with_capacity(results.len());
    for (i, (r, key)) in results.into_iter().enumerate() {
        let (e, path) = r.map_err(|e| pdmp_err(i as u64, &e))?;
        outcomes.push((Ok(e), key));
        paths.push(path);
    }
    let records: Vec<RunRecord<'_>> = outcomes
        .iter()
        .enumerate()
        .map(|(i, (r, key))| RunRecord {
            index: i as u64,
            seed: *key,
            outcome: r,
        })
        .collect();
    create_out(&a.out)?;
    write_file(&a.out, "runs.csv", |w| {
        output::write_runs(w, &records, crn).map_err(|e| e.to_string())
    })?;
    write_file(&a.out, "observations.csv", |w| {
        output::write_observations(w, &records, crn).map_err(|e| e.to_string())
    })?;
    let indexed: Vec<(u64, _)> = paths.iter().enumerate().map(|(i, p)| (i as u64, p)).collect();
    write_file(&a.out, "segments.csv", |w| {
        output::write_segments(w, &indexed, &compiled).map_err(|e| e.to_string())
    })?;
    write_manifest(Recorded {
        cli,
        inputs: l.inputs,
        flow: &l.flow,
        seed: Some(a.seed),
        runs: Some(a.runs),
        out: &a.out,
    })
}

fn cmd_replay(a: &ReplayArgs) -> Result<(), CliError> {
    let m = RunManifest::read(&a.manifest).map_err(io_err(&a.manifest))?;
    if m.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(user(format!(
            "unsupported manifest schema version {}",
            m.schema_version
        )));
    }
    let changed = m.changed_inputs();
    if !changed.is_empty() {
        let list: Vec<String> = changed.iter().map(|f| f.path.display().to_string()).collect();
        return Err(user(format!("inputs changed since the run: {}", list.join(", "))));
    }
    let mut cli: Cli = serde_json::from_value(m.command.clone()).map_err(|e| user(format!("manifest command: {e}")))?;
    let out = a.out.clone().unwrap_or_else(|| m.out_dir.join("replay"));
    match &mut cli.command {
        Command::Simulate(s) => s.out = out.clone(),
        Command::Sweep(s) => s.out = out.clone(),
        Command::Pdmp(s) => s.out = out.clone(),
        Command::Check(_) | Command::Replay(_) => return Err(user("manifest does not record a replayable command")),
    }
    dispatch(&cli)?;
    let now = hash_outputs(&out).map_err(io_err(&out))?;
    if now == m.outputs {
        println!("replay reproduced {} files in {}", now.len(), out.display());
        Ok(())
    } else {
        let differ: Vec<String> = m
            .outputs
            .iter()
            .filter(|f| !now.contains(f))
            .map(|f| f.path.display().to_string())
            .collect();
        Err(CliError::Runtime(format!(
            "replay differs from the recorded outputs: {}",
            differ.join(", ")
        )))
    }
}

fn absolute(p: &mut PathBuf) {
    if let Ok(a) = fs::canonicalize(&*p).or_else(|_| std::path::absolute(&*p)) {
        *p = a;
    }
}

fn absolute_model(m: &mut ModelArgs) {
    absolute(&mut m.crn);
    if let Some(p) = &mut m.noise {
        absolute(p);
    }
    if let Some(p) = &mut m.flow {
        absolute(p);
    }
}

impl Cli {
    /// Make every path absolute, so a recorded command replays from any
    /// working directory.
    pub fn absolutize(&mut self) {
        match &mut self.command {
            Command::Check(a) => {
                absolute(&mut a.protocol);
                absolute_model(&mut a.model);
            }
            Command::Simulate(a) => {
                absolute(&mut a.protocol);
                absolute(&mut a.out);
                absolute_model(&mut a.model);
            }
            Command::Sweep(a) => {
                absolute(&mut a.template);
                absolute(&mut a.out);
                absolute_model(&mut a.model);
            }
            Command::Pdmp(a) => {
                absolute(&mut a.protocol);
                absolute(&mut a.out);
                absolute_model(&mut a.model);
            }
            Command::Replay(a) => {
                absolute(&mut a.manifest);
                if let Some(o) = &mut a.out {
                    absolute(o);
                }
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Check(a) => cmd_check(a),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::Pdmp(a) => cmd_pdmp(cli, a),
        Command::Replay(a) => cmd_replay(a),
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    cli.absolutize();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
