use std::path::PathBuf;
use std::process::{Command, Output};

fn carts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carts"))
        .args(args)
        .env_remove("CARTS_API_KEY")
        .output()
        .unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/demo")
        .join(name)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_theorem_example() {
    let o = carts(&[
        "simulate",
        "--beta",
        "0.8",
        "--gamma",
        "0.75",
        "--opt",
        "10",
        "--c0",
        "0",
        "--alpha",
        "1",
        "--epsilon",
        "0.05",
        "--trials",
        "10000",
        "--verify",
        "theorem",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1);
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["lambda"], 27);
    assert!(report["empirical_success"].as_f64().unwrap() >= 0.95);
}

#[test]
fn simulate_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces.jsonl");
    let o = carts(&[
        "simulate",
        "--beta",
        "0.5",
        "--gamma",
        "1",
        "--opt",
        "4",
        "--trials",
        "25",
        "--verify",
        "corollary",
        "--traces",
        traces.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stdout(&o).contains("\"traces\""));
    let lines: Vec<Vec<u32>> = std::fs::read_to_string(&traces)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 25);
    for t in lines {
        assert_eq!(t.first(), Some(&0));
        assert_eq!(t.last(), Some(&4));
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn simulate_rejects_bad_parameters() {
    let o = carts(&["simulate", "--beta", "1.5", "--gamma", "0.5", "--opt", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let o = carts(&[
        "run",
        "--dataset",
        "missing.x",
        "--backend",
        "mock",
        "--script",
        &fixture("script.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("file not found: missing.x"), "{err}");
    assert!(err.contains("--dataset"), "flag table missing: {err}");
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(carts(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(carts(&[]).status.code(), Some(2));
}

#[test]
fn llm_backend_needs_credential() {
    let o = carts(&["run", "--dataset", &fixture("dataset.jsonl"), "--backend", "llm"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("CARTS_API_KEY"));
}

#[test]
fn mock_backend_needs_script() {
    let o = carts(&["run", "--dataset", &fixture("dataset.jsonl"), "--backend", "mock"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn theory_flags_must_come_together() {
    let o = carts(&["run", "--dataset", &fixture("dataset.jsonl"), "--alpha", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = carts(&[
        "run",
        "--dataset",
        &fixture("dataset.jsonl"),
        "--iterations",
        "2",
        "--alpha",
        "1",
        "--beta",
        "1",
        "--gamma",
        "1",
        "--epsilon",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn theory_budget_sets_rounds() {
    // opt defaults to the 3 items: 3/1 + 2 ln 2 = 4.39, so 5 rounds
    let o = carts(&[
        "run",
        "--dataset",
        &fixture("dataset.jsonl"),
        "--backend",
        "mock",
        "--script",
        &fixture("script.json"),
        "--chains",
        "2",
        "--alpha",
        "1",
        "--beta",
        "1",
        "--gamma",
        "1",
        "--epsilon",
        "0.5",
        "--seed",
        "7",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r["rounds"], 5);
    assert_eq!(r["final"]["text"], "Portable Speakers for Outdoor and Party Music");
}

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn validate_reports_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let good = std::fs::read_to_string(fixture("dataset.jsonl")).unwrap();
    let path = write(&dir, "d.jsonl", &format!("{good}{{\"module_id\":\"x\"}}\n"));
    let o = carts(&["validate", "--dataset", &path]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("line 2: items required"), "{out}");
    assert!(out.contains("1 valid job(s), 1 error(s)"));

    let o = carts(&["validate", "--dataset", &fixture("dataset.jsonl")]);
    assert!(o.status.success());
}

#[test]
fn malformed_line_fails_only_that_job_unless_strict() {
    let dir = tempfile::tempdir().unwrap();
    let good = std::fs::read_to_string(fixture("dataset.jsonl")).unwrap();
    let data = write(&dir, "d.jsonl", &format!("not json\n{good}"));
    let base = [
        "run",
        "--dataset",
        &data,
        "--backend",
        "mock",
        "--script",
        &fixture("script.json"),
        "--chains",
        "2",
        "--iterations",
        "2",
        "--seed",
        "7",
    ];

    let o = carts(&base);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        std::fs::read_to_string(fixture("golden_carts.jsonl")).unwrap()
    );
    assert!(stderr(&o).contains("line 1"));

    let mut strict = base.to_vec();
    strict.push("--strict");
    let o = carts(&strict);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_job_exit_code_depends_on_strict() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(&dir, "empty.json", "{}");
    let base = [
        "run",
        "--dataset",
        &fixture("dataset.jsonl"),
        "--backend",
        "mock",
        "--script",
        &script,
    ];
    let o = carts(&base);
    assert!(o.status.success());
    assert!(stdout(&o).is_empty());
    let mut strict = base.to_vec();
    strict.push("--strict");
    assert_eq!(carts(&strict).status.code(), Some(1));
}

#[test]
fn empty_dataset_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&dir, "empty.jsonl", "");
    let out = dir.path().join("out.jsonl");
    let o = carts(&[
        "run",
        "--dataset",
        &data,
        "--backend",
        "mock",
        "--script",
        &fixture("script.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&out).unwrap(), b"");
}

#[test]
fn templates_override_is_used() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "gag.txt", "Broken template {nonexistent}");
    let o = carts(&[
        "run",
        "--dataset",
        &fixture("dataset.jsonl"),
        "--backend",
        "mock",
        "--script",
        &fixture("script.json"),
        "--templates",
        dir.path().to_str().unwrap(),
        "--strict",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nonexistent"), "{}", stderr(&o));
}
