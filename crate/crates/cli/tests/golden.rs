use std::fs;
use std::path::Path;

use tracelogdet_cli::run;

const TARGETS: [&str; 9] = [
    "k0m-errors",
    "optimal-m",
    "bounds-comparison",
    "alpha",
    "asymptotic",
    "saturation",
    "radius-scan",
    "noise-crossover",
    "boxcox-sweep",
];

fn produce(target: &str, dir: &Path) -> String {
    let out = dir.join(format!("{target}.csv"));
    let code = run(["tracelogdet", "reproduce", "--table", target, "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{target} exited with {code}");
    fs::read_to_string(out).unwrap()
}

/// Same header and text cells; numbers within 1e-5 relative (last printed digit may flip).
fn assert_matches(target: &str, got: &str, want: &str) {
    let (g, w): (Vec<&str>, Vec<&str>) = (got.lines().collect(), want.lines().collect());
    assert_eq!(g.first(), w.first(), "{target}: header changed");
    assert_eq!(g.len(), w.len(), "{target}: row count changed");
    for (i, (gl, wl)) in g.iter().zip(&w).enumerate().skip(1) {
        let (gc, wc): (Vec<&str>, Vec<&str>) = (gl.split(',').collect(), wl.split(',').collect());
        assert_eq!(gc.len(), wc.len(), "{target} row {i}");
        for (a, b) in gc.iter().zip(&wc) {
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-5 * y.abs() + 1e-6, "{target} row {i}: {a} vs {b}"),
                _ => assert_eq!(a, b, "{target} row {i}"),
            }
        }
    }
}

#[test]
fn reproduce_targets_match_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for target in TARGETS {
        let got = produce(target, dir.path());
        let want = fs::read_to_string(golden.join(format!("{target}.csv"))).unwrap();
        assert_matches(target, &got, &want);
    }
}

#[test]
fn reproduce_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for target in ["noise-crossover", "boxcox-sweep"] {
        let a = produce(target, dir.path());
        let b = produce(target, dir.path());
        assert_eq!(a, b, "{target}");
    }
}

#[test]
fn json_format_carries_the_same_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("alpha.json");
    assert_eq!(run(["tracelogdet", "reproduce", "--table", "alpha", "--format", "json", "--out", out.to_str().unwrap()]), 0);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[2]["m"], 4);
    // full precision, not the six digits of the CSV
    let norm = rows[2]["weight_norm"].as_f64().unwrap();
    let exact = (9.0f64 + 16.0 / 9.0 + 1.0 / 16.0).sqrt();
    assert!((norm - exact).abs() < 1e-14, "{norm}");
}

#[test]
fn alpha_table_matches_published_values() {
    let dir = tempfile::tempdir().unwrap();
    let csv = produce("alpha", dir.path());
    let published = [
        (0.50, 1.12, 0.011),
        (1.54, 2.52, 0.025),
        (3.29, 4.45, 0.045),
        (6.14, 7.33, 0.073),
        (10.78, 11.88, 0.119),
        (18.49, 19.44, 0.194),
        (31.61, 32.38, 0.324),
    ];
    for (line, (w, a, sd)) in csv.lines().skip(1).zip(published) {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(format!("{:.2}", v[1]), format!("{w:.2}"), "{line}");
        assert_eq!(format!("{:.2}", v[2]), format!("{a:.2}"), "{line}");
        assert_eq!(format!("{:.3}", v[3]), format!("{sd:.3}"), "{line}");
    }
}
