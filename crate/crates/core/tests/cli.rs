use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_scm-active");

fn config(name: &str) -> String {
    format!("{}/configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(dir: &Path, extra: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(["run", "--config", &config("small.toml"), "--out"])
        .arg(dir)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn validate_presets() {
    for name in ["chain.toml", "dag.toml", "small.toml"] {
        let out = Command::new(BIN).args(["validate", "-c", &config(name)]).output().unwrap();
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        assert!(text.starts_with("ok:"), "{text}");
    }
    let out = Command::new(BIN).args(["validate", "-c", &config("chain.toml")]).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("251 candidates"));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "version = 2\n").unwrap();
    let out = Command::new(BIN).arg("validate").arg("-c").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(BIN).args(["run", "-c", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(BIN).args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = run(dir.path(), &["--policy", "dp_upstream"]);
    assert_eq!(out.status.code(), Some(1), "upstream DP needs upstream candidates");
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(run(d.path(), &["--policy", "random", "--trials", "2"]).status.success());
    }
    assert!(run(c.path(), &["--policy", "random", "--trials", "2", "--seed", "99"]).status.success());
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("trace.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn summarize_verb_matches_run_output() {
    let d = tempfile::tempdir().unwrap();
    assert!(run(d.path(), &["--steps", "2"]).status.success());
    let trace = d.path().join("trace.csv");
    let again = d.path().join("again.csv");
    let out = Command::new(BIN).arg("summarize").arg(&trace).arg("-o").arg(&again).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(d.path().join("summary.csv")).unwrap(),
        std::fs::read(&again).unwrap()
    );
    // 4 policies x 3 steps (0, 1, 2) plus the header
    let text = std::fs::read_to_string(&again).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 3);
}

#[test]
fn output_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["run", "-c", &config("small.toml"), "--steps", "0", "--policy", "observe"])
        .env("SCM_ACTIVE_OUT", d.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let trace = std::fs::read_to_string(d.path().join("trace.csv")).unwrap();
    // header plus one step-0 row per trial
    assert_eq!(trace.lines().count(), 1 + 2);
}
