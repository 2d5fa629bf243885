use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_idlease"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

fn call(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn idlease")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_outputs_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let (rep, log, chain) = (dir.path().join("r.json"), dir.path().join("e.tsv"), dir.path().join("c.txt"));
    let o = call(&[
        "run",
        "--scenario",
        s(&scenario("baseline")),
        "--report-out",
        s(&rep),
        "--log-out",
        s(&log),
        "--chain-out",
        s(&chain),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("scenario baseline"));
    let first = fs::read_to_string(&log).unwrap();
    assert!(first.lines().all(|l| l.split('\t').count() == 4), "log lines are time, actor, kind, ids");

    let o = call(&["verify", "--report", s(&rep), "--log", s(&log)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let o = call(&["replay", "--scenario", s(&scenario("baseline")), "--log", s(&log), "--chain", s(&chain)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("replay matches"));
}

#[test]
fn replay_with_other_seed_diverges() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("e.tsv");
    let sc = scenario("baseline");
    assert_eq!(call(&["run", "--scenario", s(&sc), "--log-out", s(&log)]).status.code(), Some(0));
    let o = call(&["replay", "--scenario", s(&sc), "--seed", "99", "--log", s(&log)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverges at line"));
}

#[test]
fn tampered_report_is_an_invariant_violation() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("r.json");
    assert_eq!(call(&["run", "--scenario", s(&scenario("baseline")), "--report-out", s(&rep)]).status.code(), Some(0));
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&rep).unwrap()).unwrap();
    // claim the maintainer took an extra coin
    let m = v["deltas"]["maintainer"].as_i64().unwrap();
    v["deltas"]["maintainer"] = (m + 100_000_000).into();
    fs::write(&rep, v.to_string()).unwrap();
    let o = call(&["verify", "--report", s(&rep)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("violation"));
}

#[test]
fn schema_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("cut6", "[[owners]]\n[[campaigns]]\n[[adversary]]\naction = \"cut\"\ncut = 6\n"),
        ("negdeposit", "[economics]\ndeposit_rate = -0.1\n[[owners]]\n[[campaigns]]\n"),
        ("unknown", "colour = \"blue\"\n"),
        ("syntax", "[[owners]\n"),
    ];
    for (name, body) in cases {
        let p = dir.path().join(format!("{name}.toml"));
        fs::write(&p, body).unwrap();
        let o = call(&["run", "--scenario", s(&p)]);
        assert_eq!(o.status.code(), Some(1), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("schema error"), "{name}");
    }
    let o = call(&["run", "--scenario", s(&dir.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn estimate_reference() {
    let o = call(&["estimate", "--count", "1000", "--service", "25", "--payment", "25"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("service phase 171.520 s"), "{text}");
    assert!(text.contains("payment phase 197.400 s"), "{text}");
}
