//! End-to-end runs of the command-line tool.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use obrbsde::game::FeedbackStrategy;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn solve(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obrbsde"))
        .arg("solve")
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Every report file except the manifest, by relative path.
fn report_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn write_scenario(dir: &Path, base: &str, extra: &str) -> PathBuf {
    let text = fs::read_to_string(scenario(base)).unwrap() + extra;
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn full_pipeline_passes_and_writes_every_report() {
    let out = tempfile::tempdir().unwrap();
    let s = scenario("standard_2x2.toml");
    let o = solve(&[s.to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = only_run_dir(out.path());
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("run-"));
    let m = manifest(&dir);
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["scenario"]["name"], "standard_2x2");
    assert_eq!(m["seed"], 20240601);
    assert_eq!(m["spec_sha256"].as_str().unwrap().len(), 64);
    let tasks = m["tasks"].as_array().unwrap();
    let kinds: Vec<&str> = tasks.iter().map(|t| t["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["validate", "solve_direct", "penalize", "double_penalize", "saddle", "export"]);
    for t in tasks {
        assert_eq!(t["status"], "passed", "{t}");
        for f in t["files"].as_array().unwrap() {
            assert!(dir.join(f.as_str().unwrap()).is_file(), "{f}");
        }
    }
    let penalize = &tasks[2];
    assert_eq!(penalize["findings"]["nonincreasing_in_n"], false);
}

#[test]
fn identical_inputs_give_identical_reports() {
    let out = tempfile::tempdir().unwrap();
    let s = scenario("coupled_2x2_n2.toml");
    for _ in 0..2 {
        assert_eq!(solve(&[s.to_str().unwrap()], out.path()).status.code(), Some(0));
    }
    let serial = Command::new(env!("CARGO_BIN_EXE_obrbsde"))
        .env("OBRBSDE_WORKERS", "1")
        .args(["solve", s.to_str().unwrap(), "--out"])
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(serial.status.code(), Some(0));
    let runs: Vec<_> = ["run-0001", "run-0002", "run-0003"]
        .iter()
        .map(|r| report_files(&out.path().join(r)))
        .collect();
    assert!(!runs[0].is_empty());
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
    assert_eq!(manifest(&out.path().join("run-0003"))["workers"], 1);
}

#[test]
fn seed_override_changes_only_the_catalog() {
    let out = tempfile::tempdir().unwrap();
    let s = scenario("standard_2x2_n2.toml");
    let a = solve(&[s.to_str().unwrap(), "--tasks", "saddle"], out.path());
    let b = solve(&[s.to_str().unwrap(), "--tasks", "saddle", "--seed", "99"], out.path());
    assert_eq!((a.status.code(), b.status.code()), (Some(0), Some(0)));
    let (ma, mb) = (manifest(&out.path().join("run-0001")), manifest(&out.path().join("run-0002")));
    assert_eq!(mb["seed"], 99);
    assert_ne!(ma["tasks"][0]["seed"], mb["tasks"][0]["seed"]);
    let (fa, fb) = (report_files(&out.path().join("run-0001")), report_files(&out.path().join("run-0002")));
    assert_eq!(fa["saddle_a_star.txt"], fb["saddle_a_star.txt"]);
}

#[test]
fn task_selection_runs_only_the_named_tasks() {
    let out = tempfile::tempdir().unwrap();
    let s = scenario("standard_2x2.toml");
    let o = solve(&[s.to_str().unwrap(), "--tasks", "validate"], out.path());
    assert_eq!(o.status.code(), Some(0));
    let files = report_files(&only_run_dir(out.path()));
    assert_eq!(files.keys().collect::<Vec<_>>(), ["validate.csv"]);
}

#[test]
fn unknown_task_is_a_configuration_error() {
    let out = tempfile::tempdir().unwrap();
    let s = scenario("standard_2x2.toml");
    let o = solve(&[s.to_str().unwrap(), "--tasks", "frobnicate"], out.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown task `frobnicate`"));
}

#[test]
fn invalid_scenarios_are_rejected_with_locations() {
    let out = tempfile::tempdir().unwrap();
    for (file, needle) in [
        ("invalid/zero_cost_loop.toml", "no zero-cost loop"),
        ("invalid/zero_switching_cost.toml", "cost positivity"),
    ] {
        let s = scenario(file);
        let o = solve(&[s.to_str().unwrap()], out.path());
        assert_eq!(o.status.code(), Some(2), "{file}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle) && err.contains(":6:"), "{err}");
    }
    // nothing runs on a rejected scenario
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 0);
}

#[test]
fn terminal_outside_the_domain_skips_dependent_tasks() {
    let work = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("standard_2x2_n2.toml"))
        .unwrap()
        .replace("alpha = [[1.0, 0.4], [0.0, 0.8]]", "alpha = [[3.0, 0.4], [0.0, 0.8]]");
    let path = work.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let out = work.path().join("runs");
    let o = solve(&[path.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    let m = manifest(&only_run_dir(&out));
    let status: Vec<&str> = m["tasks"].as_array().unwrap().iter().map(|t| t["status"].as_str().unwrap()).collect();
    assert_eq!(status, ["failed", "error", "skipped", "skipped"]);
    assert!(m["tasks"][2]["message"].as_str().unwrap().contains("solve_direct failed"));
}

#[test]
fn corrupted_solution_fails_the_saddle_check_and_dumps_strategies() {
    let work = tempfile::tempdir().unwrap();
    let path = write_scenario(
        work.path(),
        "standard_2x2_n2.toml",
        "\n[[task]]\nkind = \"saddle\"\nname = \"corrupted\"\ncatalog_size = 10\nperturb_root = 0.5\n",
    );
    let out = work.path().join("runs");
    let o = solve(&[path.to_str().unwrap(), "--tasks", "corrupted"], &out);
    assert_eq!(o.status.code(), Some(1));
    let dir = only_run_dir(&out);
    let dumps: Vec<PathBuf> = fs::read_dir(dir.join("corrupted_violations"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert!(!dumps.is_empty());
    for d in dumps {
        let s = FeedbackStrategy::read_csv(fs::File::open(&d).unwrap()).unwrap();
        assert_eq!(s.shape(), (2, 2));
    }
    let m = manifest(&dir);
    assert_eq!(m["tasks"][0]["status"], "failed");
    assert_eq!(m["exit_code"], 1);
}
