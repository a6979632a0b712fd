//! Result files.
//!
//! | file | columns / shape |
//! |------|-----------------|
//! | `final.json` | single deterministic result |
//! | `trace_<k>.csv` | `time_s`, one column per species |
//! | `runs.csv` | `run_index, seed, <species>..., elapsed_s, status` |
//! | `observations.csv` | `run_index, idn, time_s, <species>...` |
//! | `grid.csv` | `<params>..., p_hat, ci_lo, ci_hi, n, successes, status` |
//! | `segments.csv` | `run_index, segment, mode, kind, entry_time_s, exit_time_s, cause` |
//!
//! Concentrations are in the network's concentration unit, volumes in L,
//! temperatures in K and times in seconds. Every JSON document carries
//! `schema_version`.

use std::io::Write;

use bioproto_core::crn::Crn;
use bioproto_core::pdmp::{ExitCause, HybridPath};
use bioproto_core::sample::EvalResult;
use bioproto_core::sem_det::{EvalError, Trace};
use bioproto_core::sem_stoch::{CompiledProtocol, ModeKind};
use serde::{Deserialize, Serialize};

use crate::smc::SweepGrid;
use crate::units::UnitSystem;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub concentration: String,
    pub volume: String,
    pub temperature: String,
    pub time: String,
}

impl From<&UnitSystem> for Units {
    fn from(u: &UnitSystem) -> Self {
        Units {
            concentration: u.concentration.clone(),
            volume: "L".into(),
            temperature: "K".into(),
            time: "s".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSample {
    pub conc: Vec<f64>,
    pub volume: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalObservation {
    pub idn: u64,
    pub time_s: f64,
    pub conc: Vec<f64>,
}

/// Contents of `final.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub schema_version: u32,
    pub units: Units,
    pub species: Vec<String>,
    pub sample: FinalSample,
    pub observations: Vec<FinalObservation>,
    pub elapsed_s: f64,
}

fn species(crn: &Crn) -> Vec<String> {
    crn.species().iter().map(|s| s.name.clone()).collect()
}

impl FinalResult {
    pub fn new(r: &EvalResult, crn: &Crn, units: &UnitSystem) -> Self {
        FinalResult {
            schema_version: SCHEMA_VERSION,
            units: units.into(),
            species: species(crn),
            sample: FinalSample {
                conc: r.sample.conc.clone(),
                volume: r.sample.volume,
                temperature: r.sample.temperature,
            },
            observations: r
                .observations
                .iter()
                .map(|o| FinalObservation {
                    idn: o.idn,
                    time_s: o.time,
                    conc: o.conc.clone(),
                })
                .collect(),
            elapsed_s: r.elapsed,
        }
    }
}

pub fn write_final<W: Write>(w: W, r: &EvalResult, crn: &Crn, units: &UnitSystem) -> serde_json::Result<()> {
    let mut w = w;
    serde_json::to_writer_pretty(&mut w, &FinalResult::new(r, crn, units))?;
    w.write_all(b"\n").map_err(serde_json::Error::io)
}

/// Shortest round-trip text; scientific outside [1e-4, 1e6).
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e6).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Samples of one equilibration, time measured on the sample's clock.
pub fn write_trace<W: Write>(w: W, trace: &Trace, crn: &Crn) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["time_s".to_string()];
    header.extend(species(crn));
    out.write_record(&header)?;
    let tr = &trace.trajectory;
    for (t, x) in tr.times().iter().zip(tr.states()) {
        let mut row = vec![num(trace.start + t)];
        row.extend(x.iter().take(crn.species_count()).map(|v| num(*v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// One executed run of an ensemble.
pub struct RunRecord<'a> {
    pub index: u64,
    pub seed: u64,
    pub outcome: &'a Result<EvalResult, String>,
}

pub fn runs_header(crn: &Crn) -> Vec<String> {
    let mut h = vec!["run_index".to_string(), "seed".to_string()];
    h.extend(species(crn));
    h.push("elapsed_s".into());
    h.push("status".into());
    h
}

pub fn write_runs<W: Write>(w: W, runs: &[RunRecord<'_>], crn: &Crn) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(runs_header(crn))?;
    let n = crn.species_count();
    for r in runs {
        let mut row = vec![r.index.to_string(), r.seed.to_string()];
        match r.outcome {
            Ok(e) => {
                row.extend(e.sample.conc.iter().map(|v| num(*v)));
                row.push(num(e.elapsed));
                row.push("ok".into());
            }
            Err(msg) => {
                row.extend(std::iter::repeat_n(String::new(), n + 1));
                row.push(format!("error: {msg}"));
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_observations<W: Write>(w: W, runs: &[RunRecord<'_>], crn: &Crn) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["run_index".to_string(), "idn".to_string(), "time_s".to_string()];
    header.extend(species(crn));
    out.write_record(&header)?;
    for r in runs {
        let Ok(e) = r.outcome else { continue };
        for o in &e.observations {
            let mut row = vec![r.index.to_string(), o.idn.to_string(), num(o.time)];
            row.extend(o.conc.iter().map(|v| num(*v)));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_grid_csv<W: Write>(w: W, grid: &SweepGrid) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = grid.axes.iter().map(|a| a.name.clone()).collect();
    header.extend(["p_hat", "ci_lo", "ci_hi", "n", "successes", "status"].map(String::from));
    out.write_record(&header)?;
    for c in &grid.cells {
        let mut row: Vec<String> = c.values.iter().map(|v| num(*v)).collect();
        match (&c.estimate, &c.error) {
            (Some(e), _) => {
                row.extend([
                    num(e.p_hat),
                    num(e.ci.0),
                    num(e.ci.1),
                    e.n.to_string(),
                    e.successes.to_string(),
                ]);
                row.push(if e.failed == 0 {
                    "ok".into()
                } else {
                    format!("ok, {} runs skipped", e.failed)
                });
            }
            (None, err) => {
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(format!("error: {}", err.as_deref().unwrap_or("unknown")));
            }
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct GridDocument<'a> {
    schema_version: u32,
    predicate: &'a str,
    #[serde(flatten)]
    grid: &'a SweepGrid,
    argmax: Vec<usize>,
}

pub fn write_grid_json<W: Write>(w: W, grid: &SweepGrid, predicate: &str) -> serde_json::Result<()> {
    let mut w = w;
    let doc = GridDocument {
        schema_version: SCHEMA_VERSION,
        predicate,
        grid,
        argmax: grid.argmax(),
    };
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n").map_err(serde_json::Error::io)
}

fn kind_name(k: ModeKind) -> &'static str {
    match k {
        ModeKind::DrawRates => "draw_rates",
        ModeKind::Dispense => "dispense",
        ModeKind::Observe => "observe",
        ModeKind::Equilibrate => "equilibrate",
        ModeKind::Terminal => "terminal",
    }
}

fn cause_name(c: ExitCause) -> &'static str {
    match c {
        ExitCause::Jump => "jump",
        ExitCause::Guard => "guard",
        ExitCause::Horizon => "horizon",
    }
}

pub fn write_segments<W: Write>(w: W, paths: &[(u64, &HybridPath)], compiled: &CompiledProtocol) -> csv::Result<()> {
    let kinds = compiled.mode_kinds();
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "run_index",
        "segment",
        "mode",
        "kind",
        "entry_time_s",
        "exit_time_s",
        "cause",
    ])?;
    for (run, path) in paths {
        for (i, s) in path.segments.iter().enumerate() {
            out.write_record([
                run.to_string(),
                i.to_string(),
                s.mode.to_string(),
                kind_name(kinds[s.mode]).to_string(),
                num(s.entry_time),
                num(s.exit_time),
                cause_name(s.cause).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Message recorded for a failed run.
pub fn run_error(e: &EvalError) -> String {
    e.to_string()
}
