use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn bioproto(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bioproto"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(out: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(out)
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn check_accepts_titration() {
    let out = bioproto(&[
        "check",
        p(&fixture("titration.protocol")),
        "--crn",
        p(&fixture("titration.crn")),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(lines(&out.stdout).is_empty());
}

#[test]
fn check_reports_linearity_with_span() {
    let dir = tempfile::tempdir().unwrap();
    let prot = dir.path().join("dup.protocol");
    fs::write(&prot, "let A = sample([H+ = 0.1 M]; 1 mL; 298.15 K) in\nMix(A, A)\n").unwrap();
    let out = bioproto(&["check", p(&prot), "--crn", p(&fixture("titration.crn"))]);
    assert_eq!(out.status.code(), Some(1));
    let d = lines(&out.stdout);
    let lin = d
        .iter()
        .find(|d| d["code"] == "linearity")
        .expect("linearity diagnostic");
    assert_eq!(lin["severity"], "error");
    assert_eq!(lin["span"]["line"], 1);
    assert!(lin["message"].as_str().unwrap().contains("`A`"));
}

#[test]
fn check_reports_unbound_names_and_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let prot = dir.path().join("free.protocol");
    fs::write(
        &prot,
        "Equilibrate(Mix(B, sample([H+ = 1 M]; 1 mL; 298.15 K)), ${t} s)\n",
    )
    .unwrap();
    let out = bioproto(&["check", p(&prot), "--crn", p(&fixture("titration.crn"))]);
    assert_eq!(out.status.code(), Some(1));
    let codes: Vec<String> = lines(&out.stdout)
        .iter()
        .map(|d| d["code"].as_str().unwrap().to_string())
        .collect();
    assert!(codes.contains(&"unbound_variable".to_string()), "{codes:?}");
    assert!(codes.contains(&"unbound_parameter".to_string()), "{codes:?}");
}

#[test]
fn check_reports_syntax_errors() {
    let dir = tempfile::tempdir().unwrap();
    let crn = dir.path().join("no_header.crn");
    fs::write(&crn, "A ->{1} B\n").unwrap();
    let out = bioproto(&["check", p(&fixture("titration.protocol")), "--crn", p(&crn)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(lines(&out.stdout)[0]["code"], "syntax");
}

#[test]
fn simulate_det_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = bioproto(&[
        "simulate",
        p(&fixture("titration.protocol")),
        "--crn",
        p(&fixture("titration.crn")),
        "--out",
        p(dir.path()),
        "--trace",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("final.json")).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["units"]["concentration"], "M");
    let h = v["sample"]["conc"][0].as_f64().unwrap();
    let exact = 0.05 / (1.0 + 2.81e-10 * 0.05 * 0.05 * 0.05 * 1e4);
    assert!((h - exact).abs() <= 1e-6 * exact);
    assert_eq!(v["elapsed_s"], 1e4);
    assert_eq!(v["observations"][0]["idn"], 1);
    let trace = fs::read_to_string(dir.path().join("trace_0.csv")).unwrap();
    assert!(trace.starts_with("time_s,H+,Cl-,Na+,OH-,H2O\n"));
}

#[test]
fn fixed_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = bioproto(&[
            "simulate",
            p(&fixture("titration.protocol")),
            "--crn",
            p(&fixture("titration.crn")),
            "--mode",
            "stoch",
            "--noise",
            p(&fixture("noise/example5.json")),
            "--runs",
            "1",
            "--seed",
            "42",
            "--out",
            p(&out),
        ]);
        assert_eq!(o.status.code(), Some(0));
        (
            fs::read(out.join("runs.csv")).unwrap(),
            fs::read(out.join("observations.csv")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn one_cell_grid_equals_ensemble_with_predicate() {
    let dir = tempfile::tempdir().unwrap();
    let (template, crn, flow, noise) = (
        fixture("dsd_sweep.protocol"),
        fixture("dsd.crn"),
        fixture("dsd.flow.json"),
        fixture("noise/protocol_only.json"),
    );
    let common = [
        "--crn",
        p(&crn),
        "--flow",
        p(&flow),
        "--noise",
        p(&noise),
        "--runs",
        "40",
        "--seed",
        "9",
    ];
    let grid_dir = dir.path().join("grid");
    let mut args = vec!["sweep", p(&template)];
    args.extend(common);
    args.extend(["--param", "p3=0.5:0.5:1", "--param", "p4=0.54"]);
    args.extend(["--predicate", "Output in [21.3, 22.0] at final", "--out", p(&grid_dir)]);
    assert_eq!(bioproto(&args).status.code(), Some(0));

    let runs_dir = dir.path().join("runs");
    let mut args = vec!["simulate", p(&template), "--mode", "stoch"];
    args.extend(common);
    args.extend(["--param", "p3=0.5", "--param", "p4=0.54", "--out", p(&runs_dir)]);
    assert_eq!(bioproto(&args).status.code(), Some(0));

    let mut rdr = csv::Reader::from_path(runs_dir.join("runs.csv")).unwrap();
    let col = rdr.headers().unwrap().iter().position(|h| h == "Output").unwrap();
    let hits = rdr
        .records()
        .map(|r| r.unwrap()[col].parse::<f64>().unwrap())
        .filter(|x| (21.3..=22.0).contains(x))
        .count();
    let mut rdr = csv::Reader::from_path(grid_dir.join("grid.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][4].parse::<u64>().unwrap(), 40);
    assert_eq!(rows[0][5].parse::<usize>().unwrap(), hits);
}

#[test]
fn pdmp_writes_segments() {
    let dir = tempfile::tempdir().unwrap();
    let out = bioproto(&[
        "pdmp",
        p(&fixture("titration.protocol")),
        "--crn",
        p(&fixture("titration.crn")),
        "--runs",
        "3",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let seg = fs::read_to_string(dir.path().join("segments.csv")).unwrap();
    assert!(seg.starts_with("run_index,segment,mode,kind,entry_time_s,exit_time_s,cause\n"));
    assert_eq!(seg.lines().filter(|l| l.contains(",equilibrate,")).count(), 3);
}

#[test]
fn replay_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let crn = dir.path().join("t.crn");
    fs::copy(fixture("titration.crn"), &crn).unwrap();
    let out = dir.path().join("out");
    let o = bioproto(&[
        "simulate",
        p(&fixture("titration.protocol")),
        "--crn",
        p(&crn),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    fs::write(&crn, fs::read_to_string(&crn).unwrap().replace("2.81e-10", "3e-10")).unwrap();
    let o = bioproto(&["replay", p(&out.join("manifest.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("inputs changed"));
}

#[test]
fn argument_errors_exit_one() {
    assert_eq!(bioproto(&["simulate"]).status.code(), Some(1));
    assert_eq!(bioproto(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bioproto(&["--help"]).status.code(), Some(0));
    let o = bioproto(&[
        "sweep",
        p(&fixture("dsd_sweep.protocol")),
        "--crn",
        p(&fixture("dsd.crn")),
        "--param",
        "p3=0.5:0.4:3",
        "--predicate",
        "Output in [0, 1] at final",
        "--out",
        "/nonexistent/never",
    ]);
    assert_eq!(o.status.code(), Some(1));
}
