use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.json"))
}

fn aeronet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aeronet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_reference(out: &Path) -> Output {
    aeronet(&["run", s(&scenario("reference")), "--out", s(out)])
}

#[test]
fn run_writes_log_and_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run_reference(&out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("events.log").is_file());
    assert!(out.join("metrics.json").is_file());
    let summary = String::from_utf8_lossy(&o.stdout);
    assert!(summary.contains("mission complete"), "{summary}");
}

#[test]
fn invalid_scenario_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    let text = fs::read_to_string(scenario("reference")).unwrap();
    fs::write(
        &bad,
        text.replacen("\"duration_s\"", "\"bogus_key\": 1, \"duration_s\"", 1),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = aeronet(&["run", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));
    assert!(!out.exists());
    let v = aeronet(&["validate", s(&bad)]);
    assert_eq!(v.status.code(), Some(2));
}

#[test]
fn validate_accepts_bundled_scenario() {
    let o = aeronet(&["validate", s(&scenario("line5"))]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("valid"));
}

#[test]
fn same_seed_same_bytes_and_seed_override_changes_them() {
    let tmp = tempfile::tempdir().unwrap();
    let path = scenario("load_aloha");
    let logs: Vec<Vec<u8>> = ["a", "b", "c"]
        .iter()
        .zip(["7", "7", "8"])
        .map(|(d, seed)| {
            let out = tmp.path().join(d);
            assert!(
                aeronet(&["run", s(&path), "--seed", seed, "--out", s(&out)])
                    .status
                    .success()
            );
            fs::read(out.join("events.log")).unwrap()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
    assert_ne!(logs[0], logs[2]);
}

#[test]
fn metrics_reproduces_metrics_file() {
    let tmp = tempfile::tempdir().unwrap();
    run_reference(tmp.path());
    let o = aeronet(&["metrics", s(&tmp.path().join("events.log"))]);
    assert!(o.status.success());
    assert_eq!(o.stdout, fs::read(tmp.path().join("metrics.json")).unwrap());
}

#[test]
fn empty_log_gives_zeroed_report() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("events.log");
    fs::write(&log, "").unwrap();
    let o = aeronet(&["metrics", s(&log)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["classes"], serde_json::json!([]));
    assert_eq!(v["duration_s"], 0.0);
}

#[test]
fn corrupted_line_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    run_reference(tmp.path());
    let log = tmp.path().join("events.log");
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[6] = "{\"t\": 0.0, not json";
    fs::write(&log, lines.join("\n") + "\n").unwrap();
    let o = aeronet(&["metrics", s(&log)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 7"));
}

#[test]
fn truncated_log_is_partial() {
    let tmp = tempfile::tempdir().unwrap();
    run_reference(tmp.path());
    let log = tmp.path().join("events.log");
    let text = fs::read_to_string(&log).unwrap();
    let keep: Vec<&str> = text.lines().take(50).collect();
    fs::write(&log, keep.join("\n") + "\n").unwrap();
    let o = aeronet(&["metrics", s(&log)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run_end"));
}

#[test]
fn replay_filters_by_category() {
    let tmp = tempfile::tempdir().unwrap();
    run_reference(tmp.path());
    let log = tmp.path().join("events.log");
    let o = aeronet(&["replay", s(&log), "--filter", "mission"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(!body.is_empty());
    assert!(
        body.iter()
            .all(|l| l.split_whitespace().nth(2) == Some("mission")),
        "{text}"
    );
    assert!(text.contains("STAGE_LOITER"));

    let bad = aeronet(&["replay", s(&log), "--filter", "nonsense"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn multiple_runs_use_consecutive_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let o = aeronet(&[
        "run",
        s(&scenario("tdma")),
        "--seed",
        "40",
        "--runs",
        "2",
        "--out",
        s(tmp.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for seed in [40, 41] {
        let dir = tmp.path().join(format!("seed-{seed}"));
        let m: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.join("metrics.json")).unwrap()).unwrap();
        assert_eq!(m["seed"], seed);
    }
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let o = run_reference(&file);
    assert_eq!(o.status.code(), Some(3));
}
