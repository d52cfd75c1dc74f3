use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn specsurg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specsurg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bound_states(report: &Value) -> Vec<(f64, u64)> {
    report["bound_states"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["kappa"].as_f64().unwrap(), s["multiplicity"].as_u64().unwrap()))
        .collect()
}

fn analyze_json(problem: &Path) -> Value {
    let out = specsurg(&["analyze", path_str(problem), "--k-grid", "0.5:2:4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn analyze_two_channel_example_finds_two_simple_states() {
    let states = bound_states(&analyze_json(&data("example9_3.json")));
    assert_eq!(states.len(), 2);
    assert!((states[0].0 - 5.095548).abs() < 1e-5 && states[0].1 == 1);
    assert!((states[1].0 - 0.12308204).abs() < 1e-7 && states[1].1 == 1);
}

#[test]
fn analyze_free_dirichlet_has_no_bound_states() {
    assert!(bound_states(&analyze_json(&data("free_dirichlet.json"))).is_empty());
}

#[test]
fn non_selfadjoint_boundary_exits_with_input_error() {
    let out = specsurg(&["analyze", path_str(&data("bad_boundary.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("boundary"));
}

#[test]
fn malformed_json_reports_line_and_column() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("broken.json");
    std::fs::write(&p, "{\n  \"n\": 1,\n  \"potential\": {\"family\": \"zero\"\n}").unwrap();
    let out = specsurg(&["analyze", path_str(&p)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn invalid_tolerance_override_is_rejected() {
    let out = specsurg(&["analyze", path_str(&data("free_dirichlet.json")), "--tol", "rank_tol=-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn surgery_add_round_trips_through_analyze() {
    let dir = TempDir::new().unwrap();
    let perturbed = dir.path().join("perturbed.json");
    let result = dir.path().join("result.json");
    let out = specsurg(&[
        "surgery",
        path_str(&data("free_robin.json")),
        "--plan",
        path_str(&data("add_simple.plan.json")),
        "--problem-out",
        path_str(&perturbed),
        "--out",
        path_str(&result),
        "--k-grid",
        "0.5:2:4",
        "--x-grid",
        "0:2:5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res: Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(res["steps"].as_array().unwrap().len(), 1);
    assert!(res["det_audit"].as_array().unwrap().iter().all(|r| r["rel_error"].as_f64().unwrap() < 1e-6));
    let states = bound_states(&analyze_json(&perturbed));
    assert_eq!(states.len(), 1);
    assert!((states[0].0 - 1.5).abs() < 1e-5);
}

#[test]
fn surgery_lower_round_trips_to_simple_state() {
    let dir = TempDir::new().unwrap();
    let perturbed = dir.path().join("perturbed.json");
    let out = specsurg(&[
        "surgery",
        path_str(&data("double_state.json")),
        "--plan",
        path_str(&data("lower.plan.json")),
        "--problem-out",
        path_str(&perturbed),
        "--out",
        path_str(&dir.path().join("result.json")),
        "--k-grid",
        "0.5:2:3",
        "--x-grid",
        "0:1:3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let states = bound_states(&analyze_json(&perturbed));
    assert_eq!(states.len(), 1);
    assert_eq!(states[0].1, 1);
    assert!((states[0].0 - 1.0).abs() < 1e-6);
}

#[test]
fn surgery_on_missing_state_exits_with_plan_mismatch() {
    let out = specsurg(&[
        "surgery",
        path_str(&data("free_robin.json")),
        "--plan",
        path_str(&data("missing_state.plan.json")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step 0"));
}

#[test]
fn verify_passes_on_two_channel_example() {
    let out = specsurg(&["verify", path_str(&data("example9_3.json")), "--k-grid", "0.2:4:6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn verify_rejects_non_hermitian_samples() {
    let out = specsurg(&["verify", path_str(&data("nonhermitian_tabulated.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not Hermitian"));
}

#[test]
fn reproduce_unknown_fixture_lists_valid_ids() {
    let out = specsurg(&["reproduce", "ex11.2"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ex9.5"));
}

#[test]
fn reproduce_marchenko_fixture_passes() {
    let out = specsurg(&["reproduce", "ex9.5", "--format", "json"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], Value::Bool(true));
}

#[test]
fn analyze_output_is_byte_identical_across_runs() {
    let problem = data("example9_3.json");
    let args = ["analyze", path_str(&problem), "--k-grid", "0.5:3:6"];
    let a = specsurg(&args);
    let b = specsurg(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn analyze_csv_has_header_and_one_row_per_k() {
    let out = specsurg(&["analyze", path_str(&data("example9_3.json")), "--format", "csv", "--k-grid", "0.5:3:6"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("k,S11_re"));
    assert_eq!(lines.len(), 7);
}
