use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdm")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/cms.session.json")
}

#[test]
fn run_writes_a_log_that_summary_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("cms.log");
    let out = gdm(&["run", fixture().to_str().unwrap(), "--log", log.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let id = text(&out.stderr)
        .lines()
        .find_map(|l| l.strip_prefix("collaboration ").map(str::to_string))
        .expect("collaboration id on stderr");

    let again = gdm(&["summary", &id, "--log", log.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(again.status.code(), Some(0), "{}", text(&again.stderr));
    assert_eq!(text(&again.stdout), text(&out.stdout));
}

#[test]
fn script_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("empty.json");
    std::fs::write(&script, r#"{"actors": [], "steps": []}"#).unwrap();
    let out = gdm(&["run", script.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(text(&out.stderr).contains("no steps"));
}

#[test]
fn policies_are_listed_and_described() {
    let out = gdm(&["policies", "list"]);
    assert!(out.status.success());
    assert_eq!(text(&out.stdout).lines().count(), 5);

    let out = gdm(&["policies", "describe", "ConsentingTogether", "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["policyId"], "ConsentingTogether");
}

#[test]
fn parse_reports_canonical_form_or_error() {
    let ok = gdm(&["parse", "Dependency[ BP:Task->SD:Operation ]"]);
    assert!(ok.status.success());
    assert_eq!(text(&ok.stdout).trim(), "Dependency[BP:Task -> SD:Operation]");

    let bad = gdm(&["parse", "Similarity[BP:DataObject -> SD:Entity]"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(text(&bad.stderr).contains("ArrowMismatch"));
}
