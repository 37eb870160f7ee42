use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn seqred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqred"))
        .args(args)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = seqred(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(&args);
}

fn tree(dir: &TempDir) -> (String, String) {
    simulate(
        dir.path(),
        &["--structure", "tree", "--players", "16", "--matches-per-pair", "2", "--beta", "0.5", "--sigma", "1.5", "--seed", "1"],
    );
    let c = dir.path().join("contests.csv").to_str().unwrap().to_string();
    let p = dir.path().join("players.csv").to_str().unwrap().to_string();
    (c, p)
}

fn kv(table: &str, key: &str) -> String {
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("key\tvalue"));
    lines
        .find_map(|l| l.strip_prefix(&format!("{key}\t")).map(str::to_string))
        .unwrap_or_else(|| panic!("no {key} in\n{table}"))
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn simulate_tree_writes_thirty_contests_deterministically() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    tree(&a);
    tree(&b);
    assert_eq!(data_rows(&a.path().join("contests.csv")), 30);
    assert_eq!(data_rows(&a.path().join("players.csv")), 16);
    for f in ["contests.csv", "players.csv", "theta.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("theta.json")).unwrap()).unwrap();
    assert_eq!(meta["parameters"]["sigma"], 1.5);
    assert_eq!(meta["parameters"]["beta"], 0.5);
}

#[test]
fn simulate_three_level_writes_four_hundred_rows() {
    let d = TempDir::new().unwrap();
    simulate(d.path(), &["--structure", "three-level", "--groups", "100", "--seed", "3"]);
    assert_eq!(data_rows(&d.path().join("data.csv")), 400);
}

#[test]
fn graph_reports_widths() {
    let d = TempDir::new().unwrap();
    let (c, p) = tree(&d);
    let t = ok(&["graph", "--model", "pairwise-probit", "--contests", &c, "--players", &p]);
    assert_eq!(kv(&t, "width"), "2");
    assert_eq!(kv(&t, "lower_bound"), "2");
    assert_eq!(kv(&t, "vertices"), "16");
    assert_eq!(kv(&t, "edges"), "15");
    assert_eq!(kv(&t, "cost_exponent"), "10");

    let two = TempDir::new().unwrap();
    simulate(two.path(), &["--structure", "two-level", "--groups", "10"]);
    let data = two.path().join("data.csv");
    let t = ok(&["graph", "--model", "multilevel-logit", "--data", data.to_str().unwrap()]);
    assert_eq!(kv(&t, "width"), "1");
    assert_eq!(kv(&t, "edges"), "0");

    let three = TempDir::new().unwrap();
    simulate(three.path(), &["--structure", "three-level", "--groups", "100"]);
    let data = three.path().join("data.csv");
    let t = ok(&["graph", "--model", "multilevel-logit", "--data", data.to_str().unwrap()]);
    assert_eq!(kv(&t, "width"), "2");
    assert_eq!(kv(&t, "vertices"), "300");

    let rr = TempDir::new().unwrap();
    simulate(rr.path(), &["--structure", "round-robin", "--players", "6", "--matches-per-pair", "1"]);
    let c = rr.path().join("contests.csv");
    let p = rr.path().join("players.csv");
    let t = ok(&[
        "graph", "--model", "pairwise-logit", "--contests", c.to_str().unwrap(), "--players", p.to_str().unwrap(),
    ]);
    assert_eq!(kv(&t, "width"), "6");
    assert_eq!(kv(&t, "edges"), "15");
}

#[test]
fn malformed_rows_exit_with_input_error() {
    let d = TempDir::new().unwrap();
    let (c, p) = tree(&d);
    let text = std::fs::read_to_string(&c).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[4] = "4,p0,p1".to_string();
    std::fs::write(&c, lines.join("\n") + "\n").unwrap();
    let out = seqred(&["graph", "--model", "pairwise-probit", "--contests", &c, "--players", &p]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5"), "{err}");

    lines[4] = "4,p0,p1,3".to_string();
    std::fs::write(&c, lines.join("\n") + "\n").unwrap();
    let out = seqred(&["graph", "--model", "pairwise-probit", "--contests", &c, "--players", &p]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5") && err.contains("column 4"), "{err}");

    lines[4] = "4,p0,nobody,1".to_string();
    std::fs::write(&c, lines.join("\n") + "\n").unwrap();
    let out = seqred(&["graph", "--model", "pairwise-probit", "--contests", &c, "--players", &p]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nobody"));
}

#[test]
fn bad_flags_are_rejected() {
    let d = TempDir::new().unwrap();
    let (c, p) = tree(&d);
    for k in ["9", "-1"] {
        let out = seqred(&["fit", "--model", "pairwise-probit", "--contests", &c, "--players", &p, "--k", k]);
        assert_eq!(out.status.code(), Some(2), "k={k}");
    }
    let out = seqred(&["fit", "--model", "pairwise-probit", "--contests", &c, "--players", &p, "--nodes", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = seqred(&["graph", "--model", "multilevel-logit"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn width_refusal_exits_with_numerical_code() {
    let d = TempDir::new().unwrap();
    simulate(d.path(), &["--structure", "round-robin", "--players", "6", "--matches-per-pair", "1"]);
    let c = d.path().join("contests.csv");
    let p = d.path().join("players.csv");
    let out = seqred(&[
        "loglik", "--model", "pairwise-logit", "--contests", c.to_str().unwrap(), "--players", p.to_str().unwrap(),
        "--k", "2", "--max-width", "4",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
}

#[test]
fn fit_report_is_json_with_documented_keys() {
    let d = TempDir::new().unwrap();
    let (c, p) = tree(&d);
    let report = d.path().join("report.json");
    ok(&[
        "fit", "--model", "pairwise-probit", "--contests", &c, "--players", &p, "--k", "2", "--output",
        report.to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for key in ["estimates", "se", "loglik", "width", "timings_ms"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["width"], 2);
    for method in ["laplace", "sr"] {
        assert!(v["estimates"][method]["beta"].is_f64());
        assert!(v["estimates"][method]["sigma"].as_f64().unwrap() > 0.0);
        assert!(v["loglik"][method].is_f64());
        assert!(v["timings_ms"][method]["per_evaluation"].as_f64().unwrap() > 0.0);
    }
    assert!(v["loglik"]["sr"].as_f64().unwrap().is_finite());
}

#[test]
fn fit_three_level_reports_all_parameters() {
    let d = TempDir::new().unwrap();
    simulate(d.path(), &["--structure", "three-level", "--groups", "30", "--seed", "5"]);
    let data = d.path().join("data.csv");
    let out = ok(&["fit", "--model", "multilevel-logit", "--data", data.to_str().unwrap(), "--k", "1", "--no-se"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    for name in ["alpha", "beta", "sigma1", "sigma2"] {
        assert!(v["estimates"]["sr"][name].is_f64(), "{name}");
    }
    assert!(v["se"]["sr"].is_null());
}

#[test]
fn sigma_grid_emits_one_row_per_sigma_and_column_per_level() {
    let d = TempDir::new().unwrap();
    let (c, p) = tree(&d);
    let out = ok(&[
        "loglik", "--model", "pairwise-probit", "--contests", &c, "--players", &p, "--sigma-grid", "0.1:3.0:30", "--k",
        "0,1,3,5",
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "sigma\tsr_k0\tsr_k1\tsr_k3\tsr_k5");
    assert_eq!(lines.len(), 31);
    for l in &lines[1..] {
        let cells: Vec<f64> = l.split('\t').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 5);
        assert!(cells.iter().all(|v| v.is_finite()));
    }
    let last: Vec<f64> = lines[30].split('\t').map(|c| c.parse().unwrap()).collect();
    assert!((last[0] - 3.0).abs() < 1e-12);
}

#[test]
fn gaussian_levels_agree() {
    let d = TempDir::new().unwrap();
    simulate(
        d.path(),
        &["--structure", "three-level", "--model", "multilevel-gaussian", "--groups", "20", "--residual-sd", "0.7"],
    );
    let data = d.path().join("data.csv");
    let out = ok(&[
        "loglik", "--model", "multilevel-gaussian", "--residual-sd", "0.7", "--data", data.to_str().unwrap(), "--theta",
        "-0.5,0.5,1.0,0.5", "--k", "0,1,3,5", "--laplace",
    ]);
    let values: Vec<f64> = out
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 5);
    for v in &values[1..] {
        assert!((v - values[0]).abs() < 1e-8, "{values:?}");
    }
}

#[test]
fn importance_sampling_output_is_reproducible() {
    let d = TempDir::new().unwrap();
    let (c, p) = tree(&d);
    let args = [
        "loglik", "--model", "pairwise-probit", "--contests", &c, "--players", &p, "--theta", "0.5,1.5", "--k", "0",
        "--is-budget", "10000", "--seed", "7",
    ];
    let a = ok(&args);
    let b = ok(&args);
    assert_eq!(a, b);
    assert!(a.lines().any(|l| l.starts_with("is(n=10000,seed=7)")));
}

#[test]
fn simulate_then_fit_recovers_generating_values() {
    let d = TempDir::new().unwrap();
    simulate(
        d.path(),
        &["--structure", "tree", "--players", "64", "--matches-per-pair", "4", "--beta", "0.5", "--sigma", "1.5", "--seed", "2"],
    );
    let c = d.path().join("contests.csv");
    let p = d.path().join("players.csv");
    let out = ok(&[
        "fit", "--model", "pairwise-probit", "--contests", c.to_str().unwrap(), "--players", p.to_str().unwrap(), "--k", "2",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    for (name, truth) in [("beta", 0.5), ("sigma", 1.5)] {
        let est = v["estimates"]["sr"][name].as_f64().unwrap();
        let se = v["se"]["sr"][name].as_f64().unwrap();
        assert!((est - truth).abs() < 3.0 * se, "{name}: {est} ± {se}");
    }
}

#[test]
fn boundary_estimates_report_missing_standard_errors() {
    let d = TempDir::new().unwrap();
    simulate(d.path(), &["--structure", "two-level", "--groups", "20", "--sigma1", "0.01", "--seed", "4"]);
    let data = d.path().join("data.csv");
    let v: serde_json::Value =
        serde_json::from_str(&ok(&["fit", "--model", "multilevel-logit", "--data", data.to_str().unwrap(), "--k", "0"]))
            .unwrap();
    let sigma = v["estimates"]["laplace"]["sigma1"].as_f64().unwrap();
    if sigma < 1e-3 {
        assert!(v["se"]["laplace"].is_null());
        assert!(v["se_diagnostic"]["laplace"].is_string());
    } else {
        assert!(v["se"]["laplace"]["sigma1"].is_f64());
    }
}
