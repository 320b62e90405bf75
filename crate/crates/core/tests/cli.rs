//! End-to-end runs of the `mss-forge` binary: exit codes, report schema,
//! output files and seed determinism.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    run_with_threads(args, None)
}

fn run_with_threads(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mss-forge"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env(mss_forge::parallel::THREADS_ENV, t.to_string());
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_schema(v: &Value) {
    let schema: Value = serde_json::from_str(mss_forge::report::SCHEMA).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let msgs: Vec<String> = match compiled.validate(v) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| e.to_string()).collect(),
    };
    assert!(msgs.is_empty(), "report violates schema: {msgs:?}");
}

fn check<'a>(v: &'a Value, name: &str) -> &'a Value {
    v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no check named {name:?}"))
}

#[test]
fn verify_coefficients_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let o = run(&[
        "verify-coefficients",
        "--epsilon",
        "3/4",
        "--degree",
        "6",
        "--report",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = report(&path);
    assert_schema(&v);
    assert_eq!(v["metadata"]["seed"], 42);
    for c in v["checks"].as_array().unwrap() {
        assert_ne!(c["status"], "fail", "{c}");
    }
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.lines().all(|l| !l.starts_with("FAIL")), "{stderr}");
    assert_eq!(check(&v, "x1^3 coefficient of w1")["value"], "1");
    assert_eq!(check(&v, "x1*x3 coefficient of w2")["value"], "29/3");
    assert_eq!(check(&v, "x1 coefficient of the forcing f")["value"], "-6/5");
    assert_eq!(check(&v, "x1*x3 coefficient of w2")["provenance"], "published");
}

#[test]
fn report_to_stdout_without_flag() {
    let o = run(&["cone", "--points", "10"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_schema(&v);
    assert_eq!(v["metadata"]["config"]["command"], "cone");
}

#[test]
fn schema_rejects_published_without_reference() {
    let o = run(&["verify-coefficients"]);
    let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_schema(&v);
    let schema: Value = serde_json::from_str(mss_forge::report::SCHEMA).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let c = &mut v["checks"][0];
    c["provenance"] = Value::String("published".into());
    c.as_object_mut().unwrap().remove("reference");
    assert!(!compiled.is_valid(&v));
}

#[test]
fn exit_codes() {
    assert_eq!(code(&run(&["verify-coefficients", "--epsilon", "3/0"])), 3);
    assert_eq!(code(&run(&["verify-coefficients", "--epsilon", "abc"])), 3);
    assert_eq!(code(&run(&["minimize", "--boundary", "/nonexistent/boundary.csv"])), 4);
    assert_eq!(code(&run(&["minimize", "--grid", "3x3x3"])), 5);
    assert_eq!(code(&run(&["cone", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["minimize", "--grid", "5x6x7"])), 2);
}

#[test]
fn hopf_writes_profile() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("profile.csv");
    let o = run(&[
        "hopf",
        "--R",
        "2.0",
        "--nodes",
        "100",
        "--samples",
        "2000",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r,f"));
    assert!(lines.count() >= 100);
    assert!(csv.with_extension("dat").exists());
}

#[test]
fn minimize_output_feeds_back_as_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("v.csv");
    let o = run(&[
        "minimize",
        "--constrained",
        "--grid",
        "9x9x9",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let header = std::fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert!(header.ends_with(",active"), "{header}");
    assert!(Path::new(&csv.with_extension("energy.dat")).exists());
    let back = run(&["minimize", "--constrained", "--boundary", csv.to_str().unwrap()]);
    assert_eq!(code(&back), 0, "{}", String::from_utf8_lossy(&back.stderr));
}

fn without_clock(mut v: Value) -> Value {
    let m = v["metadata"].as_object_mut().unwrap();
    m.remove("started");
    m.remove("finished");
    v
}

#[test]
fn all_is_deterministic_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let oa = run_with_threads(&["all", "--seed", "42", "--report", a.to_str().unwrap()], Some(1));
    let ob = run_with_threads(&["all", "--seed", "42", "--report", b.to_str().unwrap()], Some(3));
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(code(&ob), 0, "{}", String::from_utf8_lossy(&ob.stderr));
    let (va, vb) = (report(&a), report(&b));
    assert_schema(&va);
    assert_eq!(without_clock(va), without_clock(vb));
}
