use std::path::{Path, PathBuf};

use aeronet::scenario::{self, ScenarioSpec};

fn bundled() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    v
}

fn load(name: &str) -> ScenarioSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.json"));
    scenario::load(&path).unwrap()
}

#[test]
fn every_bundled_scenario_validates() {
    let all = bundled();
    assert!(all.len() >= 10);
    for p in all {
        let spec = scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(spec.duration_s > 0.0);
    }
}

#[test]
fn short_scenarios_are_deterministic() {
    for name in ["reference", "line5", "tdma", "failsafe"] {
        let spec = load(name);
        let a = scenario::run(&spec, None).unwrap();
        let b = scenario::run(&spec, None).unwrap();
        assert_eq!(a.log_bytes(), b.log_bytes(), "{name}");
        assert_eq!(a.report, b.report, "{name}");
    }
}

#[test]
fn seed_override_is_recorded() {
    let spec = load("line5");
    let out = scenario::run(&spec, Some(99)).unwrap();
    assert_eq!(out.report.seed, 99);
    assert_eq!(out.header.seed, 99);
}

#[test]
fn survey_reports_reach_the_leader() {
    let out = scenario::run(&load("survey"), None).unwrap();
    let r = &out.report;
    assert!(r.tasks.iter().any(|t| t.met));
    assert!(r.class(1).is_some_and(|c| c.delivered > 0));
    assert!(r
        .missions
        .iter()
        .all(|m| m.completion_s.is_some() || m.aborted.is_some()));
}
