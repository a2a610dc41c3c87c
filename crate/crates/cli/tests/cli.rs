use std::fs;
use std::path::Path;
use std::process::Command;

fn spde() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spde"))
}

fn config_path() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml"))
}

#[test]
fn verify_filter_runs_only_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let out = spde().args(["verify", "--filter", "analysis", "--out-dir"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().all(|l| l.starts_with("analysis")), "{stdout}");
    let json = fs::read_to_string(dir.path().join("verify.json")).unwrap();
    assert!(json.lines().nth(1).unwrap().contains("\"config_hash\""));
}

#[test]
fn simulate_writes_hash_headers_and_respects_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = spde()
        .args(["simulate", "--config"])
        .arg(config_path())
        .args(["--paths", "3", "--steps", "16", "--modes", "6", "--seed", "5", "--out-dir"])
        .arg(dir.path())
        .env("SPDE_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let norms = fs::read_to_string(dir.path().join("norms.csv")).unwrap();
    let first = norms.lines().next().unwrap();
    assert!(first.starts_with("# config_hash: ") && first.len() == "# config_hash: ".len() + 64);
    // Header, then 3 paths × 17 times.
    assert_eq!(norms.lines().count(), 2 + 3 * 17);
    let snapshot = fs::read_to_string(dir.path().join("snapshot_0.csv")).unwrap();
    assert_eq!(snapshot.lines().next(), Some(first));
    assert_eq!(snapshot.lines().count(), 2 + 13);
}

#[test]
fn identical_runs_write_identical_files() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = spde()
            .args(["moments", "--paths", "4", "--steps", "16", "--modes", "6", "--out-dir"])
            .arg(dir.path())
            .env("SPDE_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(dir.path().join("moments.csv")).unwrap()
    };
    assert_eq!(run("1"), run("2"));
}

#[test]
fn bad_thread_count_and_bad_config_are_errors() {
    let out = spde().args(["verify", "--filter", "analysis"]).env("SPDE_THREADS", "0").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "paths = 0\n").unwrap();
    let out = spde().args(["moments", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}
