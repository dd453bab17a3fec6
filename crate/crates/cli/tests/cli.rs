use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shellrig"))
}

fn problems() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> (Output, Value) {
    let out = bin().args(args).output().unwrap();
    let report = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out, report)
}

fn num(v: &Value, path: &[&str]) -> f64 {
    path.iter().fold(v, |acc, k| &acc[*k]).as_f64().unwrap_or_else(|| panic!("missing {path:?} in {v}"))
}

fn problem(dir: &Path, body: &str) -> String {
    write(dir, "p.json", body).display().to_string()
}

#[test]
fn plane_energy_vanishes() {
    let path = problems().join("plane_energy.json");
    let (out, report) = run(&["energy", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(num(&report, &["results", "energy_p", "total"]) <= 1e-10);
    assert_eq!(report["passed"], Value::Bool(true));
}

#[test]
fn cylinder_against_a_flat_reference_bends_by_one() {
    let path = problems().join("cylinder_flat_reference.json");
    let (out, report) = run(&["energy", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let bending = num(&report, &["results", "energy_p", "bending"]);
    assert!((bending - 1.0).abs() < 1e-2, "{bending}");
}

#[test]
fn malformed_files_are_input_errors_with_a_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(
        dir.path(),
        r#"{"ambient": {"kappa": "zero"}, "chart": {"sizes": [8, 8]},
            "reference": {"g": "builtin:plane", "b": "builtin:plane"}}"#,
    );
    let (out, _) = run(&["gcm", &p]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ambient.kappa"), "{err}");
    assert!(err.contains("line 1"), "{err}");

    let (out, _) = run(&["gcm", "/nonexistent/problem.json"]);
    assert_eq!(out.status.code(), Some(2));
    let (out, _) = run(&["energy"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_immersion_is_an_input_error() {
    let path = problems().join("umbilic_gcm.json");
    let (out, _) = run(&["energy", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("immersion"));
}

#[test]
fn umbilic_flat_data_has_gauss_minus_one() {
    let path = problems().join("umbilic_gcm.json");
    let (out, report) = run(&["gcm", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!((num(&report, &["results", "gcm", "gauss_mean"]) + 1.0).abs() < 1e-10);
    assert!(num(&report, &["results", "gcm", "codazzi_sup"]) < 1e-12);
}

#[test]
fn failing_thresholds_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(
        dir.path(),
        r#"{"ambient": {"kappa": 0.0}, "chart": {"sizes": [16, 16]},
            "reference": {"g": {"constant": [[1, 0], [0, 1]]}, "b": {"constant": [[1, 0], [0, 1]]}},
            "options": {"residual_max": 1e-3}}"#,
    );
    let (out, report) = run(&["gcm", &p]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(report["passed"], Value::Bool(false));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gcm.sup_le_max"));
}

#[test]
fn thickness_search_on_umbilic_data() {
    let path = problems().join("umbilic_thicken.json");
    let (out, report) = run(&["thicken", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let eps = num(&report, &["results", "epsilon"]);
    assert!((eps - (1.0 - 0.1f64.sqrt())).abs() < 1e-4, "{eps}");
}

#[test]
fn flat_thickening_has_unit_constants() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(
        dir.path(),
        r#"{"ambient": {"kappa": 0.0}, "chart": {"sizes": [8, 8]},
            "reference": {"g": "builtin:plane", "b": "builtin:plane"}}"#,
    );
    let (out, report) = run(&["thicken", &p]);
    assert_eq!(out.status.code(), Some(0));
    for c in ["c1", "c2", "c3", "c4"] {
        assert!((num(&report, &["results", "equivalence_constants", c]) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn plane_extension_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(
        dir.path(),
        r#"{"ambient": {"kappa": 0.0}, "chart": {"sizes": [12, 12]},
            "reference": {"g": "builtin:plane", "b": "builtin:plane"}, "immersion": "builtin:plane",
            "options": {"df_tol": 1e-8, "c_cal": 1.0}}"#,
    );
    let (out, report) = run(&["extend", &p]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(num(&report, &["results", "gram_defect_sup"]) <= 1e-8);
    assert!(num(&report, &["results", "df_relative_defect_sup"]) <= 1e-8);
    assert_eq!(num(&report, &["results", "rigidity_gap", "ratio"]), 0.0);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let path = problems().join("equator_extend.json");
    let path = path.to_str().unwrap();
    let a = bin().args(["extend", path, "--threads", "2"]).output().unwrap();
    let b = bin().args(["extend", path, "--threads", "2"]).output().unwrap();
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let one: Value = serde_json::from_slice(&bin().args(["extend", path, "--threads", "1"]).output().unwrap().stdout).unwrap();
    let two: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(one["results"], two["results"]);
    assert_ne!(one["config_hash"], two["config_hash"]);
}

#[test]
fn floats_are_written_with_seventeen_digits() {
    let path = problems().join("cylinder_flat_reference.json");
    let out = bin().args(["energy", path.to_str().unwrap()]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.contains("\"bending\"")).unwrap();
    let value = line.split(':').nth(1).unwrap().trim().trim_end_matches(',');
    let mantissa = value.split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17, "{value}");
}

#[test]
fn out_and_csv_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let csv = dir.path().join("csv");
    let path = problems().join("umbilic_gcm.json");
    let out = bin()
        .args(["gcm", path.to_str().unwrap(), "--out", report.to_str().unwrap(), "--csv", csv.to_str().unwrap(), "--timing"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS gcm.finite"));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r["wall_time_s"].as_f64().unwrap() >= 0.0);
    let table = std::fs::read_to_string(csv.join("gcm.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("node,i,j,x,y,gauss,codazzi_1,codazzi_2"));
    assert_eq!(lines.count(), 32 * 32);
}

#[test]
fn exact_start_converges_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(
        dir.path(),
        r#"{"ambient": {"kappa": 0.0}, "chart": {"sizes": [12, 12]},
            "reference": {"g": "builtin:plane", "b": "builtin:plane"}, "immersion": "builtin:plane",
            "options": {"expect_status": "converged"}}"#,
    );
    let csv = dir.path().join("csv");
    let (out, report) = run(&["minimize", &p, "--csv", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report["results"]["iterations"], Value::from(0));
    let trace = std::fs::read_to_string(csv.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,stretching,bending,total,grad_norm,w1p,normal_w1p,step\n"));
}

#[test]
fn perturbed_cylinder_converges_to_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(
        dir.path(),
        r#"{"ambient": {"kappa": 0.0}, "chart": {"sizes": [16, 16]},
            "reference": {"g": "builtin:cylinder", "b": "builtin:cylinder"}, "immersion": "perturb:cylinder:0.02:5",
            "options": {"reference_immersion": "builtin:cylinder", "expect_status": "converged",
                        "tol_energy": 1e-6, "energy_max": 1e-6, "w1p_max": 1e-2}}"#,
    );
    let (out, report) = run(&["minimize", &p]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(num(&report, &["results", "final", "total"]) < num(&report, &["results", "initial_energy"]));
}

#[test]
fn incompatible_data_stalls_on_a_floor() {
    let path = problems().join("umbilic_minimize.json");
    let (out, report) = run(&["minimize", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report["results"]["status"], Value::from("stalled"));
}

#[test]
fn validate_passes_and_names_every_check() {
    let (out, report) = run(&["validate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for prefix in ["ambient.", "compatibility.", "energy.", "thickening.", "immersion.", "minimize."] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "no {prefix} check in {names:?}");
    }
    assert!(names.contains(&"thickening.slice_form_matches_b.kappa=1"));
}
