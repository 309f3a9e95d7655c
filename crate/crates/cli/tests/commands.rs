use std::fs;
use std::path::Path;
use std::process::Command;

use tracelogdet::bounds::BoundsReport;
use tracelogdet::estimators::EstimateReport;
use tracelogdet_cli::report::CertifiedReport;
use tracelogdet_cli::run;

fn run_to(dir: &Path, name: &str, args: &[&str]) -> (i32, String) {
    let out = dir.join(name);
    let mut argv = vec!["tracelogdet"];
    argv.extend_from_slice(args);
    argv.extend_from_slice(&["--out", out.to_str().unwrap()]);
    let code = run(argv);
    (code, fs::read_to_string(out).unwrap_or_default())
}

const GEOMETRIC: [&str; 6] = ["--family", "geometric", "--n", "1024", "--kappa", "100"];

fn with<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(&GEOMETRIC);
    v.extend_from_slice(extra);
    v
}

#[test]
fn estimate_reports_published_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, csv) = run_to(dir.path(), "est.csv", &with("estimate", &["--m", "4"]));
    assert_eq!(code, 0);
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "rel_error_pct").unwrap();
    let err: f64 = row[col].parse().unwrap();
    assert!((err - 5.6).abs() < 0.05, "{err}");
}

#[test]
fn traces_file_gives_the_same_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = run_to(dir.path(), "traces.csv", &with("traces", &["--m", "6"]));
    assert_eq!(code, 0);
    let traces = dir.path().join("traces.csv");
    let (_, from_spectrum) = run_to(dir.path(), "a.json", &with("estimate", &["--m", "4", "--format", "json"]));
    let (code, from_traces) = run_to(
        dir.path(),
        "b.json",
        &["estimate", "--traces", traces.to_str().unwrap(), "--m", "4", "--format", "json"],
    );
    assert_eq!(code, 0);
    let a: serde_json::Value = serde_json::from_str(&from_spectrum).unwrap();
    let b: serde_json::Value = serde_json::from_str(&from_traces).unwrap();
    assert_eq!(a["estimate"], b["estimate"]);
    assert!(b["truth"].is_null());
}

#[test]
fn certify_composes_estimate_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let floor = ["--floor", "0.01"];
    let (c1, est) = run_to(dir.path(), "e.json", &with("estimate", &["--m", "4", "--format", "json"]));
    let (c2, bounds) = run_to(dir.path(), "b.json", &with("bounds", &[&["--m", "4", "--k", "4", "--format", "json"][..], &floor].concat()));
    let (c3, cert) = run_to(dir.path(), "c.json", &with("certify", &[&["--m", "4", "--k", "4"][..], &floor].concat()));
    assert_eq!((c1, c2, c3), (0, 0, 0));
    let est: serde_json::Value = serde_json::from_str(&est).unwrap();
    let est: EstimateReport = serde_json::from_value(est["estimate"].clone()).unwrap();
    let bounds: BoundsReport = serde_json::from_str(&bounds).unwrap();
    let cert: CertifiedReport = serde_json::from_str(&cert).unwrap();
    assert_eq!(cert.estimate, est);
    assert_eq!(cert.bounds, bounds);
    assert_eq!(cert.verdict, bounds.verdict);
    let (lo, hi) = bounds.logdet_interval.unwrap();
    assert_eq!(cert.interval, (Some(lo), hi));
    assert_eq!(cert.clipped_kprime0, bounds.gap.clipped.ln());
}

#[test]
fn certified_report_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    for extra in [&["--m", "4"][..], &["--m", "4", "--no-floor"], &["--m", "3", "--k", "5"]] {
        let (code, text) = run_to(dir.path(), "c.json", &with("certify", extra));
        assert_eq!(code, 0, "{extra:?}");
        let rep: CertifiedReport = serde_json::from_str(&text).unwrap();
        let again: CertifiedReport = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        assert_eq!(rep, again);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["input", "m", "estimate", "bounds", "interval", "verdict", "warnings"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        for key in ["upper", "lower", "U_best", "L_best"] {
            assert!(v["bounds"].get(key).is_some(), "missing bounds.{key}");
        }
    }
}

#[test]
fn certify_from_traces_with_floor() {
    let dir = tempfile::tempdir().unwrap();
    run_to(dir.path(), "traces.csv", &with("traces", &["--m", "4"]));
    let traces = dir.path().join("traces.csv");
    let (code, text) = run_to(dir.path(), "c.json", &["certify", "--traces", traces.to_str().unwrap(), "--m", "4", "--floor", "0.01"]);
    assert_eq!(code, 0);
    let rep: CertifiedReport = serde_json::from_str(&text).unwrap();
    let (lo, hi) = (rep.interval.0.unwrap(), rep.interval.1);
    // log det of the geometric spectrum, 1024 · log(100) / 2
    let truth = 512.0 * 100f64.ln();
    assert!(lo <= truth && truth <= hi, "{lo} {truth} {hi}");
    assert!(rep.truth.is_none());
}

#[test]
fn no_floor_leaves_lower_end_open() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = run_to(dir.path(), "c.json", &with("certify", &["--m", "4", "--no-floor"]));
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["interval"][0].is_null());
    assert!(v["interval"][1].is_f64());
    assert_eq!(v["verdict"], "no_lower_bound");
    assert!(!v["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(["tracelogdet"]), 2);
    assert_eq!(run(["tracelogdet", "frobnicate"]), 2);
    assert_eq!(run(["tracelogdet", "--help"]), 0);
    assert_eq!(run_to(dir.path(), "x", &["estimate", "--family", "hexagonal", "--kappa", "10"]).0, 2);
    assert_eq!(run_to(dir.path(), "x", &["estimate", "--family", "geometric", "--kappa", "0.5"]).0, 2);
    assert_eq!(run_to(dir.path(), "x", &["estimate", "--family", "lognormal", "--kappa", "10"]).0, 2);
    assert_eq!(run_to(dir.path(), "x", &["estimate", "--traces", "/nonexistent/traces.csv"]).0, 2);
    // a floor above the mean contradicts M_2 > 1
    assert_eq!(run_to(dir.path(), "x", &with("certify", &["--m", "4", "--floor", "1.5"])).0, 3);
    // λ^m overflows
    assert_eq!(run_to(dir.path(), "x", &["traces", "--family", "geometric", "--kappa", "1e300", "--m", "4"]).0, 3);
}

#[test]
fn spectrum_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = run_to(dir.path(), "s.json", &["gen-spectrum", "--family", "clustered", "--n", "64", "--kappa", "50", "--seed", "3"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 64);
    let path = dir.path().join("s.json");
    let (_, a) = run_to(dir.path(), "a.csv", &["estimate", "--spectrum", path.to_str().unwrap()]);
    let (_, b) = run_to(dir.path(), "b.csv", &["estimate", "--family", "clustered", "--n", "64", "--kappa", "50", "--seed", "3"]);
    assert_eq!(a, b);
}

#[test]
fn diagnose_flags_two_point() {
    let dir = tempfile::tempdir().unwrap();
    let (code, csv) = run_to(dir.path(), "d.csv", &["diagnose", "--family", "two_point", "--kappa", "10", "--m", "4"]);
    assert_eq!(code, 0);
    let cv_line = csv.lines().find(|l| l.starts_with("cv_pct")).unwrap();
    assert!(cv_line.ends_with("log transform unreliable"), "{cv_line}");
}

#[test]
fn noise_sweep_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (code, csv) = run_to(
        dir.path(),
        "n.csv",
        &with("noise-sweep", &["--m", "4", "--eta", "0.01", "--trials", "200", "--noise-seed", "5"]),
    );
    assert_eq!(code, 0);
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn binary_honours_thread_variable() {
    let bin = env!("CARGO_BIN_EXE_tracelogdet");
    let ok = Command::new(bin)
        .args(["reproduce", "--table", "alpha"])
        .env("TRACELOGDET_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("m,weight_norm,alpha"));
    let bad = Command::new(bin)
        .args(["reproduce", "--table", "alpha"])
        .env("TRACELOGDET_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(!bad.stderr.is_empty());
}
