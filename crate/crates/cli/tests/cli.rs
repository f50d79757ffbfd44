use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::tempdir;

use citymove_core::calibration::{read_trace, ObservedData};
use citymove_core::report::{read_agents, read_history, read_json, Comparison, SavedState, Summary};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/smalltown")
}

fn citymove(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_citymove")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A writable copy of the smalltown fixture.
fn copy_fixture(dir: &Path) -> PathBuf {
    let src = fixture();
    fs::create_dir_all(dir.join("geo")).unwrap();
    for entry in fs::read_dir(&src).unwrap().chain(fs::read_dir(src.join("geo")).unwrap()) {
        let path = entry.unwrap().path();
        if path.is_file() {
            let rel = path.strip_prefix(&src).unwrap();
            fs::copy(&path, dir.join(rel)).unwrap();
        }
    }
    dir.join("scenario.toml")
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.clone(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn validate_smalltown() {
    let out = citymove(&["validate", s(&fixture().join("scenario.toml"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("OK"));
    assert!(text.contains("block groups: 12"), "{text}");
    assert!(text.contains("buildings: 40"), "{text}");
    assert!(text.contains("agents: 2000"), "{text}");
}

#[test]
fn validate_reports_missing_roads_layer() {
    let dir = tempdir().unwrap();
    let scenario = copy_fixture(dir.path());
    fs::remove_file(dir.path().join("geo/roads.geojson")).unwrap();
    let out = citymove(&["validate", s(&scenario)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("roads"), "{}", stderr(&out));
}

#[test]
fn validate_reports_bad_proportions() {
    let dir = tempdir().unwrap();
    let scenario = copy_fixture(dir.path());
    let profiles = fs::read_to_string(dir.path().join("profiles.csv"))
        .unwrap()
        .replace("gt150k,0.12", "gt150k,0.02");
    fs::write(dir.path().join("profiles.csv"), profiles).unwrap();
    let out = citymove(&["validate", s(&scenario)]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("profiles.csv") && err.contains("sum"), "{err}");
}

#[test]
fn validate_reports_bad_overrides_and_missing_files() {
    let scenario = fixture().join("scenario.toml");
    let out = citymove(&["validate", s(&scenario), "--override", "colour=blue"]);
    assert_eq!(out.status.code(), Some(2));
    let out = citymove(&["validate", s(&scenario), "--override", "seed"]);
    assert_eq!(out.status.code(), Some(2));
    let out = citymove(&["validate", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_is_reproducible_and_reparses() {
    let dir = tempdir().unwrap();
    let scenario = fixture().join("scenario.toml");
    let before = snapshot(&fixture());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let out = citymove(&["run", s(&scenario), "--out", s(&a)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("converged after 21 iterations"), "{}", stdout(&out));
    assert_eq!(citymove(&["run", s(&scenario), "--out", s(&b)]).status.code(), Some(0));
    assert_eq!(citymove(&["--threads", "3", "run", s(&scenario), "--out", s(&c)]).status.code(), Some(0));
    for file in ["summary.json", "history.csv", "agents.csv", "state.json"] {
        let x = fs::read(a.join(file)).unwrap();
        assert_eq!(x, fs::read(b.join(file)).unwrap(), "{file}");
        assert_eq!(x, fs::read(c.join(file)).unwrap(), "{file} across thread counts");
    }
    assert_eq!(snapshot(&fixture()), before);

    let summary: Summary = read_json(&a.join("summary.json")).unwrap();
    assert!(summary.converged);
    assert_eq!(summary.seed, 42);
    for row in read_history(&a.join("history.csv")).unwrap() {
        let sum: f64 = row.shares.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    let agents = read_agents(&a.join("agents.csv")).unwrap();
    assert_eq!(agents.len(), 2000);
    let saved: SavedState = read_json(&a.join("state.json")).unwrap();
    saved.restore().unwrap();
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempdir().unwrap();
    let scenario = fixture().join("scenario.toml");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(citymove(&["run", s(&scenario), "--out", s(&a)]).status.code(), Some(0));
    let out = citymove(&["run", s(&scenario), "--out", s(&b), "--override", "seed=7"]);
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(fs::read(a.join("agents.csv")).unwrap(), fs::read(b.join("agents.csv")).unwrap());
    let summary: Summary = read_json(&b.join("summary.json")).unwrap();
    assert_eq!(summary.seed, 7);
}

#[test]
fn non_convergence_warns_but_succeeds() {
    let dir = tempdir().unwrap();
    let out = citymove(&[
        "run",
        s(&fixture().join("scenario.toml")),
        "--out",
        s(dir.path()),
        "--override",
        "max_iterations=2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("warning"));
    let summary: Summary = read_json(&dir.path().join("summary.json")).unwrap();
    assert!(!summary.converged);
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = citymove(&["run", s(&fixture().join("scenario.toml")), "--out", s(&blocker)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

fn baseline(dir: &Path) -> PathBuf {
    let out_dir = dir.join("baseline");
    let out = citymove(&["run", s(&fixture().join("scenario.toml")), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0));
    out_dir.join("state.json")
}

#[test]
fn whatif_empty_and_transit_off() {
    let dir = tempdir().unwrap();
    let state = baseline(dir.path());
    let empty = dir.path().join("none.toml");
    fs::write(&empty, "").unwrap();
    let out = citymove(&["whatif", s(&state), s(&empty), "--out", s(&dir.path().join("w0"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let cmp: Comparison = read_json(&dir.path().join("w0/comparison.json")).unwrap();
    assert!(cmp.deltas.mode_shares.values().all(|&d| d == 0.0));
    assert_eq!(cmp.deltas.mean_commute_minutes, 0.0);

    let saved: SavedState = read_json(&state).unwrap();
    let (model, _) = saved.restore().unwrap();
    let mut edits = String::new();
    for bg in &model.geography.block_groups {
        edits += &format!(
            "[[interventions]]\nkind = \"set_transit_flag\"\ntarget = \"{}\"\nflag = \"has_bus\"\nvalue = false\n\n",
            bg.geoid
        );
    }
    let off = dir.path().join("off.toml");
    fs::write(&off, edits).unwrap();
    let out = citymove(&["whatif", s(&state), s(&off), "--out", s(&dir.path().join("w1"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let cmp: Comparison = read_json(&dir.path().join("w1/comparison.json")).unwrap();
    assert_eq!(cmp.whatif.mode_shares["bus"], 0.0);
    assert!(cmp.baseline.mode_shares["bus"] > 0.0);
    let saved: SavedState = read_json(&dir.path().join("w1/state.json")).unwrap();
    assert_eq!(saved.scenario.interventions.len(), model.geography.block_groups.len());
}

#[test]
fn whatif_cheap_housing_near_work() {
    let dir = tempdir().unwrap();
    let state = baseline(dir.path());
    let edits = dir.path().join("edits.json");
    fs::write(
        &edits,
        r#"[{"kind": "add_vacancies", "target": "B37", "value": 100},
            {"kind": "set_rent", "target": "B37", "value": 1000.0}]"#,
    )
    .unwrap();
    let out = citymove(&["whatif", s(&state), s(&edits), "--out", s(&dir.path().join("w"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let cmp: Comparison = read_json(&dir.path().join("w/comparison.json")).unwrap();
    assert!((cmp.deltas.mode_shares["walk"] - 0.0045).abs() < 1e-12);
}

#[test]
fn whatif_eviction_is_rejected() {
    let dir = tempdir().unwrap();
    let state = baseline(dir.path());
    let edits = dir.path().join("edits.toml");
    fs::write(
        &edits,
        "[[interventions]]\nkind = \"remove_vacancies\"\ntarget = \"B37\"\nvalue = 1000\n",
    )
    .unwrap();
    let out = citymove(&["whatif", s(&state), s(&edits), "--out", s(&dir.path().join("w"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("B37"));
    assert!(!dir.path().join("w/comparison.json").exists());
}

#[test]
fn report_re_emits_from_state() {
    let dir = tempdir().unwrap();
    let state = baseline(dir.path());
    let out_dir = dir.path().join("report");
    let out = citymove(&["report", s(&state), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for file in ["summary.json", "history.csv", "agents.csv"] {
        assert_eq!(
            fs::read(out_dir.join(file)).unwrap(),
            fs::read(dir.path().join("baseline").join(file)).unwrap(),
            "{file}"
        );
    }
    ObservedData::read(&out_dir.join("observed_housing.csv"), &out_dir.join("observed_modes.csv")).unwrap();
}

#[test]
fn calibrate_with_a_single_evaluation() {
    let dir = tempdir().unwrap();
    let state = baseline(dir.path());
    let obs = dir.path().join("obs");
    assert_eq!(citymove(&["report", s(&state), "--out", s(&obs)]).status.code(), Some(0));
    let fitted = dir.path().join("fit");
    let out = citymove(&[
        "calibrate",
        s(&fixture().join("scenario.toml")),
        "--observed-housing",
        s(&obs.join("observed_housing.csv")),
        "--observed-modes",
        s(&obs.join("observed_modes.csv")),
        "--out",
        s(&fitted),
        "--override",
        "max_evaluations=1",
        "--override",
        "seed_checks=0",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("budget"));
    let result: serde_json::Value = read_json(&fitted.join("calibration_result.json")).unwrap();
    assert_eq!(result["evaluations"], 1);
    assert_eq!(result["budget_exhausted"], true);
    let trace = read_trace(&fitted.join("trace.csv")).unwrap();
    assert_eq!(trace.len(), 1);
    let best: Vec<f64> = serde_json::from_value(result["best_vector"].clone()).unwrap();
    assert_eq!(best, trace[0].vector);

    // The fitted tables feed straight back into a scenario.
    let copy = tempdir().unwrap();
    let scenario = copy_fixture(copy.path());
    fs::copy(fitted.join("housing_criteria.csv"), copy.path().join("housing_criteria.csv")).unwrap();
    fs::copy(fitted.join("mobility_criteria.csv"), copy.path().join("mobility_criteria.csv")).unwrap();
    assert_eq!(citymove(&["validate", s(&scenario)]).status.code(), Some(0));
}

#[test]
fn calibrate_rejects_incomplete_observations() {
    let dir = tempdir().unwrap();
    let housing = dir.path().join("h.csv");
    let modes = dir.path().join("m.csv");
    fs::write(&housing, "geoid,profile_id,percent\n25017350001,lt25k,100\n").unwrap();
    fs::write(&modes, "mode_id,percent\nwalk,60\ncar,40\n").unwrap();
    let out = citymove(&[
        "calibrate",
        s(&fixture().join("scenario.toml")),
        "--observed-housing",
        s(&housing),
        "--observed-modes",
        s(&modes),
        "--out",
        s(&dir.path().join("fit")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bike"), "{}", stderr(&out));
}
